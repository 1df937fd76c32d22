//! Network architectures and the registry that maps names to builders.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use til_core::registry::Registry;

use crate::elem::Elem;
use crate::layers::{AvgPool, Concat, Conv2d, Dense, Dropout, GlobalAvgPool, MaxPool, Relu, Sequential};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "VGG16_CLASS")]
    Vgg16Class,
    #[serde(rename = "INCEPTION_V4_CLASS")]
    InceptionV4Class,
    #[serde(rename = "COMPACT_REF")]
    CompactRef,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Vgg16Class, Architecture::InceptionV4Class, Architecture::CompactRef];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vgg16Class => "VGG16_CLASS",
            Architecture::InceptionV4Class => "INCEPTION_V4_CLASS",
            Architecture::CompactRef => "COMPACT_REF",
        }
    }

    pub fn input_px(self) -> u32 {
        match self {
            Architecture::Vgg16Class => 224,
            Architecture::InceptionV4Class => 299,
            Architecture::CompactRef => 64,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == norm || a.name().trim_end_matches("_CLASS") == norm)
            .ok_or_else(|| format!("unknown architecture {s:?}"))
    }
}

/// A buildable network layout. Builders are registered by name so callers
/// can add architectures without touching the training code.
pub trait ArchitectureSpec: Send + Sync {
    fn name(&self) -> &'static str;
    fn input_px(&self) -> u32;
    fn build_f32(&self) -> Sequential<f32>;
    fn build_f64(&self) -> Sequential<f64>;
}

/// Element types a registered architecture can be built for.
pub trait BuildElem: Elem {
    fn build(spec: &dyn ArchitectureSpec) -> Sequential<Self>;
}

impl BuildElem for f32 {
    fn build(spec: &dyn ArchitectureSpec) -> Sequential<f32> {
        spec.build_f32()
    }
}

impl BuildElem for f64 {
    fn build(spec: &dyn ArchitectureSpec) -> Sequential<f64> {
        spec.build_f64()
    }
}

macro_rules! spec {
    ($ty:ident, $arch:expr, $builder:ident) => {
        pub struct $ty;

        impl ArchitectureSpec for $ty {
            fn name(&self) -> &'static str {
                $arch.name()
            }
            fn input_px(&self) -> u32 {
                $arch.input_px()
            }
            fn build_f32(&self) -> Sequential<f32> {
                $builder()
            }
            fn build_f64(&self) -> Sequential<f64> {
                $builder()
            }
        }
    };
}

spec!(CompactRefSpec, Architecture::CompactRef, compact_ref);
spec!(Vgg16Spec, Architecture::Vgg16Class, vgg16);
spec!(InceptionV4Spec, Architecture::InceptionV4Class, inception_v4);

pub fn architecture_registry() -> Registry<dyn ArchitectureSpec> {
    let mut reg: Registry<dyn ArchitectureSpec> = Registry::new("architecture");
    reg.register(Architecture::CompactRef.name(), Arc::new(CompactRefSpec));
    reg.register(Architecture::Vgg16Class.name(), Arc::new(Vgg16Spec));
    reg.register(Architecture::InceptionV4Class.name(), Arc::new(InceptionV4Spec));
    reg
}

pub fn input_shape(px: u32) -> Shape {
    Shape::new(3, px as usize, px as usize)
}

fn conv_relu<E: Elem>(cin: usize, cout: usize, k: (usize, usize), stride: usize, pad: (usize, usize)) -> Sequential<E> {
    Sequential::new()
        .push("conv", Conv2d::new(cin, cout, k, stride, pad))
        .push("relu", Relu::default())
}

fn same<E: Elem>(cin: usize, cout: usize, k: (usize, usize)) -> Sequential<E> {
    conv_relu(cin, cout, k, 1, (k.0 / 2, k.1 / 2))
}

fn valid<E: Elem>(cin: usize, cout: usize, k: usize, stride: usize) -> Sequential<E> {
    conv_relu(cin, cout, (k, k), stride, (0, 0))
}

fn chain<E: Elem>(parts: Vec<Sequential<E>>) -> Sequential<E> {
    let mut s = Sequential::new();
    for (i, p) in parts.into_iter().enumerate() {
        s.add(format!("{i}"), p);
    }
    s
}

/// Three conv/pool blocks and a single-logit head on 64×64 input.
pub fn compact_ref<E: Elem>() -> Sequential<E> {
    Sequential::new()
        .push("block1", same(3, 8, (3, 3)))
        .push("pool1", MaxPool::new(2, 2))
        .push("block2", same(8, 16, (3, 3)))
        .push("pool2", MaxPool::new(2, 2))
        .push("block3", same(16, 16, (3, 3)))
        .push("pool3", MaxPool::new(2, 2))
        .push("head", Dense::new(16 * 8 * 8, 1))
}

/// VGG-16 (configuration D) with a single-logit head, no batch norm.
pub fn vgg16<E: Elem>() -> Sequential<E> {
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut features = Sequential::new();
    let mut cin = 3;
    for (b, widths) in blocks.iter().enumerate() {
        for (i, &w) in widths.iter().enumerate() {
            features.add(format!("conv{}_{}", b + 1, i + 1), same(cin, w, (3, 3)));
            cin = w;
        }
        features.add(format!("pool{}", b + 1), MaxPool::new(2, 2));
    }
    let classifier = Sequential::new()
        .push("fc6", Dense::new(512 * 7 * 7, 4096))
        .push("relu6", Relu::default())
        .push("drop6", Dropout::new(0.5))
        .push("fc7", Dense::new(4096, 4096))
        .push("relu7", Relu::default())
        .push("drop7", Dropout::new(0.5))
        .push("fc8", Dense::new(4096, 1));
    Sequential::new().push("features", features).push("classifier", classifier)
}

fn stem<E: Elem>() -> Sequential<E> {
    Sequential::new()
        .push("conv1", valid(3, 32, 3, 2))
        .push("conv2", valid(32, 32, 3, 1))
        .push("conv3", same(32, 64, (3, 3)))
        .push(
            "mixed1",
            Concat::new(vec![
                Sequential::new().push("pool", MaxPool::new(3, 2)),
                valid(64, 96, 3, 2),
            ]),
        )
        .push(
            "mixed2",
            Concat::new(vec![
                chain(vec![same(160, 64, (1, 1)), valid(64, 96, 3, 1)]),
                chain(vec![
                    same(160, 64, (1, 1)),
                    same(64, 64, (7, 1)),
                    same(64, 64, (1, 7)),
                    valid(64, 96, 3, 1),
                ]),
            ]),
        )
        .push(
            "mixed3",
            Concat::new(vec![
                valid(192, 192, 3, 2),
                Sequential::new().push("pool", MaxPool::new(3, 2)),
            ]),
        )
}

fn avg_then<E: Elem>(cin: usize, cout: usize) -> Sequential<E> {
    Sequential::new().push("pool", AvgPool::new(3, 1, 1)).push("proj", same(cin, cout, (1, 1)))
}

fn inception_a<E: Elem>() -> Concat<E> {
    Concat::new(vec![
        avg_then(384, 96),
        same(384, 96, (1, 1)),
        chain(vec![same(384, 64, (1, 1)), same(64, 96, (3, 3))]),
        chain(vec![same(384, 64, (1, 1)), same(64, 96, (3, 3)), same(96, 96, (3, 3))]),
    ])
}

fn reduction_a<E: Elem>() -> Concat<E> {
    Concat::new(vec![
        Sequential::new().push("pool", MaxPool::new(3, 2)),
        valid(384, 384, 3, 2),
        chain(vec![same(384, 192, (1, 1)), same(192, 224, (3, 3)), valid(224, 256, 3, 2)]),
    ])
}

fn inception_b<E: Elem>() -> Concat<E> {
    Concat::new(vec![
        avg_then(1024, 128),
        same(1024, 384, (1, 1)),
        chain(vec![same(1024, 192, (1, 1)), same(192, 224, (1, 7)), same(224, 256, (7, 1))]),
        chain(vec![
            same(1024, 192, (1, 1)),
            same(192, 192, (7, 1)),
            same(192, 224, (1, 7)),
            same(224, 224, (7, 1)),
            same(224, 256, (1, 7)),
        ]),
    ])
}

fn reduction_b<E: Elem>() -> Concat<E> {
    Concat::new(vec![
        Sequential::new().push("pool", MaxPool::new(3, 2)),
        chain(vec![same(1024, 192, (1, 1)), valid(192, 192, 3, 2)]),
        chain(vec![
            same(1024, 256, (1, 1)),
            same(256, 256, (1, 7)),
            same(256, 320, (7, 1)),
            valid(320, 320, 3, 2),
        ]),
    ])
}

fn split_1x3_3x1<E: Elem>(cin: usize) -> Concat<E> {
    Concat::new(vec![same(cin, 256, (1, 3)), same(cin, 256, (3, 1))])
}

fn inception_c<E: Elem>() -> Concat<E> {
    Concat::new(vec![
        avg_then(1536, 256),
        same(1536, 256, (1, 1)),
        same(1536, 384, (1, 1)).push("split", split_1x3_3x1(384)),
        chain(vec![same(1536, 384, (1, 1)), same(384, 448, (1, 3)), same(448, 512, (3, 1))])
            .push("split", split_1x3_3x1(512)),
    ])
}

/// Inception-V4 with a single-logit head, no batch norm.
pub fn inception_v4<E: Elem>() -> Sequential<E> {
    let mut s = Sequential::new().push("stem", stem());
    for i in 0..4 {
        s.add(format!("inception_a{}", i + 1), inception_a());
    }
    s.add("reduction_a", reduction_a());
    for i in 0..7 {
        s.add(format!("inception_b{}", i + 1), inception_b());
    }
    s.add("reduction_b", reduction_b());
    for i in 0..3 {
        s.add(format!("inception_c{}", i + 1), inception_c());
    }
    s.push("pool", GlobalAvgPool::default())
        .push("dropout", Dropout::new(0.2))
        .push("head", Dense::new(1536, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;

    #[test]
    fn names_parse() {
        assert_eq!("vgg16".parse::<Architecture>().unwrap(), Architecture::Vgg16Class);
        assert_eq!("compact-ref".parse::<Architecture>().unwrap(), Architecture::CompactRef);
        assert_eq!("INCEPTION_V4_CLASS".parse::<Architecture>().unwrap(), Architecture::InceptionV4Class);
        let json = serde_json::to_string(&Architecture::InceptionV4Class).unwrap();
        assert_eq!(json, "\"INCEPTION_V4_CLASS\"");
    }

    #[test]
    fn registry_covers_all_architectures() {
        let reg = architecture_registry();
        for a in Architecture::ALL {
            assert_eq!(reg.get(a.name()).unwrap().input_px(), a.input_px());
        }
    }

    #[test]
    fn compact_ref_shape() {
        let net: Sequential<f32> = compact_ref();
        assert_eq!(net.output_shape(input_shape(64)), Shape::new(1, 1, 1));
        assert_eq!(net.param_count(), (8 * 27 + 8) + (16 * 72 + 16) + (16 * 144 + 16) + (1024 + 1));
    }
}
