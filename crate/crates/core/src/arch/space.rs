//! Search spaces: a stacked CNN, an entire-structured UNet and a cell UNet.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    CnnStack,
    UnetEntire,
    UnetCell,
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::CnnStack => "cnn_stack",
            SpaceKind::UnetEntire => "unet_entire",
            SpaceKind::UnetCell => "unet_cell",
        })
    }
}

/// A candidate operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    Conv { k: usize },
    SepConv { k: usize },
    MaxPool { size: usize, stride: usize },
    AvgPool { size: usize, stride: usize },
    Bilinear,
    Nearest,
}

impl OpKind {
    pub fn has_parameters(&self) -> bool {
        matches!(self, OpKind::Conv { .. } | OpKind::SepConv { .. })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Conv { k } => write!(f, "conv{k}x{k}"),
            OpKind::SepConv { k } => write!(f, "sepconv{k}x{k}"),
            OpKind::MaxPool { size, stride } => write!(f, "maxpool{size}s{stride}"),
            OpKind::AvgPool { size, stride } => write!(f, "avgpool{size}s{stride}"),
            OpKind::Bilinear => f.write_str("bilinear"),
            OpKind::Nearest => f.write_str("nearest"),
        }
    }
}

/// One searched decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub candidates: Vec<OpKind>,
}

/// What a layer position does, with its channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Conv { cin: usize, cout: usize },
    /// Downsampling by two.
    Down,
    /// Upsampling to the size of the matching skip connection.
    Up,
}

/// A layer of the network and the slot that decides its operation. In the
/// cell space several positions share one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub slot: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kind: SpaceKind,
    pub slots: Vec<Slot>,
    pub layout: Vec<Position>,
    pub in_channels: usize,
    /// Stage widths: the hidden channel plan of the CNN, or the UNet widths
    /// from the top level down.
    pub widths: Vec<usize>,
    /// Whether UNet convs are followed by GroupNorm before the GeLU.
    pub group_norm: bool,
}

/// One chosen candidate index per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchGenome {
    pub choices: Vec<usize>,
}

impl ArchGenome {
    pub fn new(choices: Vec<usize>) -> Self {
        Self { choices }
    }
}

impl fmt::Display for ArchGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.choices.iter().map(|c| c.to_string()).collect();
        write!(f, "[{}]", s.join(","))
    }
}

fn conv_ops(sizes: &[usize]) -> Vec<OpKind> {
    let mut ops: Vec<OpKind> = sizes.iter().map(|&k| OpKind::Conv { k }).collect();
    ops.extend(sizes.iter().map(|&k| OpKind::SepConv { k }));
    ops
}

/// GroupNorm groups: the largest of 8, 4, 2, 1 dividing `channels`.
pub fn norm_groups(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap_or(1)
}

impl SearchSpace {
    /// Stacked conv layers `in -> widths... -> 1`. Pooling (size 3,
    /// stride 1) is offered at the middle layer, which keeps its width.
    /// Supernets drop the 7×7 kernels.
    pub fn cnn_stack(in_channels: usize, widths: &[usize], supernet: bool) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || in_channels == 0 {
            return Err(Error::Config(format!("bad cnn channel plan {widths:?}")));
        }
        let kernels: &[usize] = if supernet { &[3, 5] } else { &[3, 5, 7] };
        let mut chans = vec![in_channels];
        chans.extend_from_slice(widths);
        chans.push(1);
        let n = chans.len() - 1;
        let mid = n / 2;
        let mut slots = Vec::with_capacity(n);
        let mut layout = Vec::with_capacity(n);
        for l in 0..n {
            let mut candidates = conv_ops(kernels);
            if l == mid && chans[l] == chans[l + 1] {
                candidates.push(OpKind::MaxPool { size: 3, stride: 1 });
                candidates.push(OpKind::AvgPool { size: 3, stride: 1 });
            }
            slots.push(Slot {
                name: format!("layer{l}"),
                candidates,
            });
            layout.push(Position {
                slot: l,
                role: Role::Conv {
                    cin: chans[l],
                    cout: chans[l + 1],
                },
            });
        }
        Ok(Self {
            kind: SpaceKind::CnnStack,
            slots,
            layout,
            in_channels,
            widths: widths.to_vec(),
            group_norm: false,
        })
    }

    fn unet_layout(in_channels: usize, init: usize, depth: usize, mut slot_of: impl FnMut(&str) -> usize) -> (Vec<Position>, Vec<usize>) {
        let widths: Vec<usize> = (0..=depth).map(|l| init << l).collect();
        let mut layout = Vec::new();
        let mut cin = in_channels;
        for (l, &w) in widths.iter().enumerate() {
            if l > 0 {
                layout.push(Position {
                    slot: slot_of(&format!("down{l}")),
                    role: Role::Down,
                });
            }
            layout.push(Position {
                slot: slot_of(&format!("enc{l}a")),
                role: Role::Conv { cin, cout: w },
            });
            layout.push(Position {
                slot: slot_of(&format!("enc{l}b")),
                role: Role::Conv { cin: w, cout: w },
            });
            cin = w;
        }
        for l in (0..depth).rev() {
            layout.push(Position {
                slot: slot_of(&format!("up{l}")),
                role: Role::Up,
            });
            layout.push(Position {
                slot: slot_of(&format!("dec{l}a")),
                role: Role::Conv {
                    cin: widths[l + 1] + widths[l],
                    cout: widths[l],
                },
            });
            layout.push(Position {
                slot: slot_of(&format!("dec{l}b")),
                role: Role::Conv {
                    cin: widths[l],
                    cout: widths[l],
                },
            });
        }
        (layout, widths)
    }

    fn down_ops() -> Vec<OpKind> {
        vec![OpKind::MaxPool { size: 2, stride: 2 }, OpKind::AvgPool { size: 2, stride: 2 }]
    }

    fn up_ops() -> Vec<OpKind> {
        vec![OpKind::Bilinear, OpKind::Nearest]
    }

    /// UNet where every sampling op and every conv of every stage is its own
    /// slot.
    pub fn unet_entire(in_channels: usize, init: usize, depth: usize) -> Result<Self> {
        if depth == 0 || init == 0 || in_channels == 0 {
            return Err(Error::Config("unet needs depth, width and input channels >= 1".into()));
        }
        let mut slots = Vec::new();
        let (layout, widths) = Self::unet_layout(in_channels, init, depth, |name| {
            let candidates = if name.starts_with("down") {
                Self::down_ops()
            } else if name.starts_with("up") {
                Self::up_ops()
            } else {
                conv_ops(&[3, 5])
            };
            slots.push(Slot {
                name: name.to_string(),
                candidates,
            });
            slots.len() - 1
        });
        Ok(Self {
            kind: SpaceKind::UnetEntire,
            slots,
            layout,
            in_channels,
            widths,
            group_norm: true,
        })
    }

    /// UNet built from one searched down cell and one searched up cell, each
    /// a sampling op followed by two convs with a skip around the second.
    pub fn unet_cell(in_channels: usize, init: usize, depth: usize) -> Result<Self> {
        if depth == 0 || init == 0 || in_channels == 0 {
            return Err(Error::Config("unet needs depth, width and input channels >= 1".into()));
        }
        let slots = vec![
            Slot {
                name: "down_cell.sample".into(),
                candidates: Self::down_ops(),
            },
            Slot {
                name: "down_cell.conv_a".into(),
                candidates: conv_ops(&[3, 5]),
            },
            Slot {
                name: "down_cell.conv_b".into(),
                candidates: conv_ops(&[3, 5]),
            },
            Slot {
                name: "up_cell.sample".into(),
                candidates: Self::up_ops(),
            },
            Slot {
                name: "up_cell.conv_a".into(),
                candidates: conv_ops(&[3, 5]),
            },
            Slot {
                name: "up_cell.conv_b".into(),
                candidates: conv_ops(&[3, 5]),
            },
        ];
        let (layout, widths) = Self::unet_layout(in_channels, init, depth, |name| {
            let up = name.starts_with("up") || name.starts_with("dec");
            let base = if up { 3 } else { 0 };
            base + if name.starts_with("down") || name.starts_with("up") {
                0
            } else if name.ends_with('a') {
                1
            } else {
                2
            }
        });
        Ok(Self {
            kind: SpaceKind::UnetCell,
            slots,
            layout,
            in_channels,
            widths,
            group_norm: true,
        })
    }

    pub fn build(kind: SpaceKind, in_channels: usize, cnn_widths: &[usize], unet_init: usize, unet_depth: usize, supernet: bool) -> Result<Self> {
        match kind {
            SpaceKind::CnnStack => Self::cnn_stack(in_channels, cnn_widths, supernet),
            SpaceKind::UnetEntire => Self::unet_entire(in_channels, unet_init, unet_depth),
            SpaceKind::UnetCell => Self::unet_cell(in_channels, unet_init, unet_depth),
        }
    }

    /// Same space with GroupNorm switched on or off in the UNet blocks.
    pub fn with_group_norm(mut self, on: bool) -> Self {
        self.group_norm = on && self.kind != SpaceKind::CnnStack;
        self
    }

    pub fn slot_sizes(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.candidates.len()).collect()
    }

    /// Number of distinct genomes.
    pub fn cardinality(&self) -> u128 {
        self.slots.iter().map(|s| s.candidates.len() as u128).product()
    }

    pub fn unet_depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn check_genome(&self, g: &ArchGenome) -> Result<()> {
        if g.choices.len() != self.slots.len() {
            return Err(Error::invalid(
                "arch_genome",
                format!("{} choices for {} slots", g.choices.len(), self.slots.len()),
            ));
        }
        for (s, (&c, slot)) in g.choices.iter().zip(&self.slots).enumerate() {
            if c >= slot.candidates.len() {
                return Err(Error::invalid(
                    "arch_genome",
                    format!("slot {s} ({}) choice {c} of {}", slot.name, slot.candidates.len()),
                ));
            }
        }
        Ok(())
    }

    /// Human-readable op list of a genome.
    pub fn describe(&self, g: &ArchGenome) -> String {
        self.slots
            .iter()
            .zip(&g.choices)
            .map(|(s, &c)| format!("{}={}", s.name, s.candidates.get(c).map_or("?".into(), |o| o.to_string())))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Genome with choice `i mod size` in every slot.
    pub fn uniform_genome(&self, i: usize) -> ArchGenome {
        ArchGenome::new(self.slots.iter().map(|s| i % s.candidates.len()).collect())
    }
}
