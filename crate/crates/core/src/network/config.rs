use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::{BnStrategy, ConvMode, UniformNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Plain stack of 3×3 convolutions at constant width.
    CombStack,
    /// VGG-A/B/D/E adapted to 32×32 inputs.
    Vgg,
}

pub const COMB_STACK_DEPTHS: [usize; 2] = [8, 16];
pub const COMB_STACK_WIDTHS: [usize; 4] = [32, 48, 64, 96];
pub const VGG_DEPTHS: [usize; 4] = [11, 13, 16, 19];

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub arch: Arch,
    pub depth: usize,
    /// Base channel count of the comb stack; ignored by VGG.
    pub width: usize,
    pub mode: ConvMode,
    pub interleave: bool,
    pub bn_strategy: BnStrategy,
    pub num_classes: usize,
    /// `(C, H, W)`
    pub input_shape: [usize; 3],
    pub norm: UniformNorm,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            arch: Arch::CombStack,
            depth: 8,
            width: 32,
            mode: ConvMode::Comb,
            interleave: true,
            bn_strategy: BnStrategy::PreBn,
            num_classes: 10,
            input_shape: [3, 32, 32],
            norm: UniformNorm::ByOutChannels,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        match self.arch {
            Arch::CombStack => {
                if !COMB_STACK_DEPTHS.contains(&self.depth) {
                    return Err(Error::Config(format!(
                        "comb_stack depth must be one of {COMB_STACK_DEPTHS:?}, got {}",
                        self.depth
                    )));
                }
                if !COMB_STACK_WIDTHS.contains(&self.width) {
                    return Err(Error::Config(format!(
                        "comb_stack width must be one of {COMB_STACK_WIDTHS:?}, got {}",
                        self.width
                    )));
                }
            }
            Arch::Vgg => {
                if !VGG_DEPTHS.contains(&self.depth) {
                    return Err(Error::Config(format!(
                        "vgg depth must be one of {VGG_DEPTHS:?}, got {}",
                        self.depth
                    )));
                }
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Config("input shape must be nonempty".into()));
        }
        Ok(())
    }
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Arch { Arch::CombStack => "comb_stack", Arch::Vgg => "vgg" });
keyword_enum!(ConvMode { ConvMode::Comb => "comb", ConvMode::Standard => "standard" });
keyword_enum!(BnStrategy {
    BnStrategy::PreBn => "pre_bn",
    BnStrategy::PostBn => "post_bn",
    BnStrategy::None => "none",
});
keyword_enum!(UniformNorm {
    UniformNorm::ByOutChannels => "by_c_out",
    UniformNorm::ByInChannels => "by_c_in",
});

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords_round_trip() {
        for a in [Arch::CombStack, Arch::Vgg] {
            assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
        }
        for b in [BnStrategy::PreBn, BnStrategy::PostBn, BnStrategy::None] {
            assert_eq!(b.to_string().parse::<BnStrategy>().unwrap(), b);
        }
        assert!("dense".parse::<ConvMode>().is_err());
    }

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let bad = NetworkConfig {
            depth: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NetworkConfig {
            width: 40,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let vgg = NetworkConfig {
            arch: Arch::Vgg,
            depth: 16,
            ..Default::default()
        };
        assert!(vgg.validate().is_ok());
        let bad = NetworkConfig {
            num_classes: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
