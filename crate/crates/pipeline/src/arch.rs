//! Layer tables: one record per convolution, with the derived accumulated
//! stride (Sa), effective dilation (De) and output size (X).
//!
//! Text format, one record per line, `#` starts a comment:
//!
//! ```text
//! input 224
//! # name    C   S  D  BN L  X   Sa De
//! conv1_1   64  1  1  -  -  224 1  1
//! conv1_2   64  2  1  bn -  112 1  1
//! ```
//!
//! The trailing `X Sa De` columns are optional. When present they are
//! checked against the derived values.

use std::fmt::{self, Write as _};

use chromalab_nn::ConvGeometry;

use crate::{Error, Result};

/// Stride column: `.5` upsamples 2× before the convolution, `2` is a
/// stride-2 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    Up,
    One,
    Down,
}

impl Stride {
    fn parse(s: &str) -> Option<Self> {
        match s {
            ".5" | "0.5" => Some(Self::Up),
            "1" => Some(Self::One),
            "2" => Some(Self::Down),
            _ => None,
        }
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Up => ".5",
            Self::One => "1",
            Self::Down => "2",
        })
    }
}

/// Values from the X, Sa and De columns of a declared table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Derived {
    pub x: usize,
    pub sa: usize,
    pub de: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: Stride,
    pub dilation: usize,
    pub batchnorm: bool,
    /// Marks the layer the 1×1 prediction head attaches to.
    pub loss: bool,
    pub declared: Option<Derived>,
}

impl LayerSpec {
    pub fn geometry(&self) -> ConvGeometry {
        let stride = if self.stride == Stride::Down { 2 } else { 1 };
        ConvGeometry::same(self.kernel, stride, self.dilation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureConfig {
    /// Parses and validates, including the declared derived columns.
    pub fn parse(text: &str) -> Result<Self> {
        let mut input_size = None;
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Arch(format!("line {}: {reason}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] == "input" {
                let [_, v] = f[..] else { return Err(bad("expected `input <size>`".into())) };
                input_size = Some(v.parse().map_err(|_| bad(format!("bad input size `{v}`")))?);
                continue;
            }
            if f.len() != 6 && f.len() != 9 {
                return Err(bad(format!("expected 6 or 9 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} `{s}`")));
            let flag = |s: &str, yes: &str| match s {
                "-" => Ok(false),
                v if v == yes => Ok(true),
                v => Err(bad(format!("expected `{yes}` or `-`, got `{v}`"))),
            };
            let declared = if f.len() == 9 {
                Some(Derived { x: num(f[6], "X")?, sa: num(f[7], "Sa")?, de: num(f[8], "De")? })
            } else {
                None
            };
            layers.push(LayerSpec {
                name: f[0].to_string(),
                out_channels: num(f[1], "C")?,
                kernel: 3,
                stride: Stride::parse(f[2]).ok_or_else(|| bad(format!("stride must be .5, 1 or 2, got `{}`", f[2])))?,
                dilation: num(f[3], "D")?,
                batchnorm: flag(f[4], "bn")?,
                loss: flag(f[5], "loss")?,
                declared,
            });
        }
        let cfg = Self {
            input_size: input_size.ok_or_else(|| Error::Arch("missing `input` line".into()))?,
            layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("input {}\n# name C S D BN L X Sa De\n", self.input_size);
        for l in &self.layers {
            let _ = write!(
                s,
                "{} {} {} {} {} {}",
                l.name,
                l.out_channels,
                l.stride,
                l.dilation,
                if l.batchnorm { "bn" } else { "-" },
                if l.loss { "loss" } else { "-" }
            );
            if let Some(d) = l.declared {
                let _ = write!(s, " {} {} {}", d.x, d.sa, d.de);
            }
            s.push('\n');
        }
        s
    }

    /// Output size, accumulated stride and effective dilation of every
    /// layer. Sa counts the strides of all earlier layers plus a layer's own
    /// upsampling, since that happens before its convolution.
    pub fn derive(&self) -> Result<Vec<Derived>> {
        let mut x = self.input_size;
        let mut exp: i32 = 0;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            if l.stride == Stride::Up {
                exp -= 1;
                x *= 2;
            }
            if exp < 0 {
                return Err(Error::Arch(format!("{}: upsampling above input resolution", l.name)));
            }
            let sa = 1usize << exp;
            x = l
                .geometry()
                .output_size(x)
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Arch(format!("{}: input {x} too small", l.name)))?;
            out.push(Derived { x, sa, de: l.dilation * sa });
            if l.stride == Stride::Down {
                exp += 1;
            }
        }
        Ok(out)
    }

    /// Validates, then fills every row's X / Sa / De columns from the
    /// geometry.
    pub fn declare_derived(&mut self) -> Result<()> {
        self.validate()?;
        let derived = self.derive()?;
        for (l, d) in self.layers.iter_mut().zip(derived) {
            l.declared = Some(d);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Arch("no layers".into()));
        }
        if self.input_size == 0 {
            return Err(Error::Arch("input size must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::Arch(format!("duplicate layer name {}", l.name)));
            }
            if l.out_channels == 0 || l.dilation == 0 || l.kernel != 3 {
                return Err(Error::Arch(format!("{}: needs C >= 1, D >= 1 and a 3x3 kernel", l.name)));
            }
            if l.loss != (i + 1 == self.layers.len()) {
                return Err(Error::Arch(format!("{}: exactly the last layer carries the loss", l.name)));
            }
        }
        for (l, d) in self.layers.iter().zip(self.derive()?) {
            if let Some(decl) = l.declared {
                if decl != d {
                    return Err(Error::Arch(format!(
                        "{}: declared X={} Sa={} De={} but derived X={} Sa={} De={}",
                        l.name, decl.x, decl.sa, decl.de, d.x, d.sa, d.de
                    )));
                }
            }
        }
        if self.input_size % self.min_input_size() != 0 {
            return Err(Error::Arch(format!(
                "input {} is not a multiple of the total stride {}",
                self.input_size,
                self.min_input_size()
            )));
        }
        Ok(())
    }

    /// Spatial size of the head output.
    pub fn head_size(&self) -> usize {
        self.derive().ok().and_then(|d| d.last().map(|d| d.x)).unwrap_or(0)
    }

    /// Ratio of input to head resolution.
    pub fn head_factor(&self) -> usize {
        self.input_size / self.head_size().max(1)
    }

    /// Smallest input the stride plan can process: the largest accumulated
    /// stride reached anywhere in the stack.
    pub fn min_input_size(&self) -> usize {
        let mut exp = 0u32;
        let mut max = 0u32;
        for l in &self.layers {
            match l.stride {
                Stride::Up => exp = exp.saturating_sub(1),
                Stride::Down => {
                    exp += 1;
                    max = max.max(exp);
                }
                Stride::One => {}
            }
        }
        1 << max
    }

    pub fn last_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

/// Rows `(name, C, S, D, BN, X, Sa, De)` of the full-scale table.
const FULL: &[(&str, usize, Stride, usize, bool, usize, usize, usize)] = &[
    ("conv1_1", 64, Stride::One, 1, false, 224, 1, 1),
    ("conv1_2", 64, Stride::Down, 1, true, 112, 1, 1),
    ("conv2_1", 128, Stride::One, 1, false, 112, 2, 2),
    ("conv2_2", 128, Stride::Down, 1, true, 56, 2, 2),
    ("conv3_1", 256, Stride::One, 1, false, 56, 4, 4),
    ("conv3_2", 256, Stride::One, 1, false, 56, 4, 4),
    ("conv3_3", 256, Stride::Down, 1, true, 28, 4, 4),
    ("conv4_1", 512, Stride::One, 1, false, 28, 8, 8),
    ("conv4_2", 512, Stride::One, 1, false, 28, 8, 8),
    ("conv4_3", 512, Stride::One, 1, true, 28, 8, 8),
    ("conv5_1", 512, Stride::One, 2, false, 28, 8, 16),
    ("conv5_2", 512, Stride::One, 2, false, 28, 8, 16),
    ("conv5_3", 512, Stride::One, 2, true, 28, 8, 16),
    ("conv6_1", 512, Stride::One, 2, false, 28, 8, 16),
    ("conv6_2", 512, Stride::One, 2, false, 28, 8, 16),
    ("conv6_3", 512, Stride::One, 2, true, 28, 8, 16),
    ("conv7_1", 256, Stride::One, 1, false, 28, 8, 8),
    ("conv7_2", 256, Stride::One, 1, false, 28, 8, 8),
    ("conv7_3", 256, Stride::One, 1, true, 28, 8, 8),
    ("conv8_1", 128, Stride::Up, 1, false, 56, 4, 4),
    ("conv8_2", 128, Stride::One, 1, false, 56, 4, 4),
    ("conv8_3", 128, Stride::One, 1, false, 56, 4, 4),
];

/// The 224-pixel network with every X, Sa and De cell declared.
pub fn full_scale() -> ArchitectureConfig {
    ArchitectureConfig {
        input_size: 224,
        layers: FULL
            .iter()
            .enumerate()
            .map(|(i, &(name, c, stride, dilation, batchnorm, x, sa, de))| LayerSpec {
                name: name.to_string(),
                out_channels: c,
                kernel: 3,
                stride,
                dilation,
                batchnorm,
                loss: i + 1 == FULL.len(),
                declared: Some(Derived { x, sa, de }),
            })
            .collect(),
    }
}

/// Same stride and dilation plan with channels divided by `width_divisor`
/// and a different input size. The derived columns are declared from the
/// new geometry.
pub fn scaled(input_size: usize, width_divisor: usize) -> Result<ArchitectureConfig> {
    let mut cfg = full_scale();
    cfg.input_size = input_size;
    for l in &mut cfg.layers {
        l.out_channels = (l.out_channels / width_divisor.max(1)).max(1);
        l.declared = None;
    }
    cfg.declare_derived()?;
    Ok(cfg)
}

/// The default trainable configuration: 64-pixel input, widths / 8.
pub fn desk_scale() -> ArchitectureConfig {
    scaled(64, 8).expect("desk configuration is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_table_validates() {
        let cfg = full_scale();
        cfg.validate().unwrap();
        let d = cfg.derive().unwrap();
        let conv5: Vec<_> = cfg.layers.iter().zip(&d).filter(|(l, _)| l.name.starts_with("conv5")).collect();
        assert_eq!(conv5.len(), 3);
        assert!(conv5.iter().all(|(_, d)| d.sa == 8 && d.de == 16));
        assert_eq!(cfg.head_size(), 56);
        assert_eq!(d[19], Derived { x: 56, sa: 4, de: 4 });
        assert_eq!(cfg.min_input_size(), 8);
        assert_eq!(cfg.head_factor(), 4);
    }

    #[test]
    fn desk_head_is_sixteen() {
        let cfg = desk_scale();
        assert_eq!(cfg.head_size(), 16);
        assert_eq!(cfg.layers[0].out_channels, 8);
        assert_eq!(cfg.last_channels(), 16);
    }

    #[test]
    fn text_round_trip() {
        let cfg = full_scale();
        let back = ArchitectureConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let desk = desk_scale();
        let text = desk.to_text();
        assert!(text.contains("conv8_3 16 1 1 - loss 16 4 4"), "{text}");
        assert_eq!(ArchitectureConfig::parse(&text).unwrap(), desk);
        let bare = "input 16\nc1 4 2 1 bn -\nc2 4 1 2 - loss\n";
        let cfg = ArchitectureConfig::parse(bare).unwrap();
        assert_eq!(ArchitectureConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn mismatched_declaration_is_rejected() {
        let text = full_scale().to_text().replace("conv5_2 512 1 2 - - 28 8 16", "conv5_2 512 1 2 - - 28 8 8");
        let err = ArchitectureConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("conv5_2"), "{err}");
        let text = full_scale().to_text().replace("conv8_1 128 .5", "conv8_1 128 1");
        assert!(ArchitectureConfig::parse(&text).is_err());
    }

    #[test]
    fn malformed_text() {
        assert!(ArchitectureConfig::parse("conv1 8 1 1 - loss").is_err());
        assert!(ArchitectureConfig::parse("input 64\nconv1 8 3 1 - loss").is_err());
        assert!(ArchitectureConfig::parse("input 64\nconv1 8 1 1 - -").is_err());
        assert!(ArchitectureConfig::parse("input 64\nconv1 8 1 1 - loss\nconv1 8 1 1 - loss").is_err());
        let ok = ArchitectureConfig::parse("input 16 # tiny\nc1 4 2 1 bn -\nc2 4 1 2 - loss").unwrap();
        assert_eq!(ok.head_size(), 8);
        assert!(ArchitectureConfig::parse("input 15\nc1 4 2 1 bn -\nc2 4 1 2 - loss").is_err());
    }
}
