//! Layer-level model descriptions and activation tensor sizes.
//!
//! A [`ModelGraph`] is a strictly sequential list of layers with known output
//! shapes. It carries no weights; its job is to answer "how many bytes cross
//! the wire if we cut the model here" and to hold part-size metadata for
//! splits whose on-flash footprint has been measured.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

/// Broad classification of a layer, used for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LayerKind {
    Conv,
    Expand,
    Project,
    Bn,
    Pool,
    Classifier,
    Other,
}

/// One layer of a sequential model. Shapes omit the batch dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub name: String,
    pub output_shape: Vec<u32>,
    pub kind: LayerKind,
    /// Flash size of a model part that ends at this layer, when measured.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub part1_bytes: Option<u64>,
    /// Flash size of the complementary part that starts after this layer.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub part2_bytes: Option<u64>,
}

impl LayerSpec {
    pub fn new(name: &str, output_shape: &[u32], kind: LayerKind) -> Self {
        Self {
            name: name.to_string(),
            output_shape: output_shape.to_vec(),
            kind,
            part1_bytes: None,
            part2_bytes: None,
        }
    }

    fn with_part_sizes(mut self, part1: u64, part2: u64) -> Self {
        self.part1_bytes = Some(part1);
        self.part2_bytes = Some(part2);
        self
    }

    /// Number of elements in the output tensor.
    pub fn elements(&self) -> u64 {
        self.output_shape.iter().map(|&d| d as u64).product()
    }
}

/// A strictly sequential model: list order is execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    model_name: String,
    input_shape: Vec<u32>,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogError {
    EmptyShape { layer: String },
    ZeroDim { layer: String },
    DuplicateName { layer: String },
    NoLayers,
    UnknownLayer { layer: String },
}

impl fmt::Display for CatalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyShape { layer } => write!(f, "layer {layer} has an empty output shape"),
            Self::ZeroDim { layer } => write!(f, "layer {layer} has a zero-sized dimension"),
            Self::DuplicateName { layer } => write!(f, "duplicate layer name {layer}"),
            Self::NoLayers => write!(f, "model has no layers"),
            Self::UnknownLayer { layer } => write!(f, "unknown layer {layer}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CatalogError {}

impl ModelGraph {
    /// Validates shapes and name uniqueness; the graph is immutable afterwards.
    pub fn new(
        model_name: &str,
        input_shape: Vec<u32>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, CatalogError> {
        if layers.is_empty() {
            return Err(CatalogError::NoLayers);
        }
        for layer in &layers {
            if layer.output_shape.is_empty() {
                return Err(CatalogError::EmptyShape { layer: layer.name.clone() });
            }
            if layer.output_shape.contains(&0) {
                return Err(CatalogError::ZeroDim { layer: layer.name.clone() });
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|other| other.name == layer.name) {
                return Err(CatalogError::DuplicateName { layer: layer.name.clone() });
            }
        }
        Ok(Self { model_name: model_name.to_string(), input_shape, layers })
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn input_shape(&self) -> &[u32] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec, CatalogError> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or(CatalogError::UnknownLayer { layer: name.to_string() })
    }
}

/// Size in bytes of the named layer's output tensor.
pub fn activation_bytes(
    graph: &ModelGraph,
    layer: &str,
    element_bytes: u32,
) -> Result<u64, CatalogError> {
    let spec = graph.layer(layer)?;
    Ok(spec.elements() * element_bytes as u64)
}

// MobileNetV2 inverted-residual stack at width multiplier 0.35. Each entry is
// (block index, expanded channels, output channels, spatial in, spatial out);
// channel counts follow the divisible-by-8 rounding the reference
// implementation applies to the multiplier.
const V2_035_BLOCKS: [(u8, u32, u32, u32, u32); 16] = [
    (1, 48, 8, 112, 56),
    (2, 48, 8, 56, 56),
    (3, 48, 16, 56, 28),
    (4, 96, 16, 28, 28),
    (5, 96, 16, 28, 28),
    (6, 96, 24, 28, 14),
    (7, 144, 24, 14, 14),
    (8, 144, 24, 14, 14),
    (9, 144, 24, 14, 14),
    (10, 144, 32, 14, 14),
    (11, 192, 32, 14, 14),
    (12, 192, 32, 14, 14),
    (13, 192, 56, 14, 7),
    (14, 336, 56, 7, 7),
    (15, 336, 56, 7, 7),
    (16, 336, 112, 7, 7),
];

// Measured flash sizes (part ending at the layer, remainder) for the three
// benchmarked split points.
const SPLIT_PART_SIZES: [(&str, u64, u64); 3] = [
    ("block_2_expand", 752_600, 11_800_000),
    ("block_15_project", 2_200_000, 9_700_000),
    ("block_16_project_BN", 2_700_000, 9_200_000),
];

/// Built-in catalog for MobileNetV2 with width multiplier 0.35 at 224x224.
pub fn builtin_mobilenetv2_catalog() -> ModelGraph {
    let mut layers = vec![
        LayerSpec::new("Conv1", &[112, 112, 16], LayerKind::Conv),
        LayerSpec::new("expanded_conv_depthwise", &[112, 112, 16], LayerKind::Conv),
        LayerSpec::new("expanded_conv_project_BN", &[112, 112, 8], LayerKind::Bn),
    ];
    for (idx, expanded, out, s_in, s_out) in V2_035_BLOCKS {
        layers.push(LayerSpec::new(
            &format!("block_{idx}_expand"),
            &[s_in, s_in, expanded],
            LayerKind::Expand,
        ));
        layers.push(LayerSpec::new(
            &format!("block_{idx}_depthwise"),
            &[s_out, s_out, expanded],
            LayerKind::Conv,
        ));
        layers.push(LayerSpec::new(
            &format!("block_{idx}_project"),
            &[s_out, s_out, out],
            LayerKind::Project,
        ));
        layers.push(LayerSpec::new(
            &format!("block_{idx}_project_BN"),
            &[s_out, s_out, out],
            LayerKind::Bn,
        ));
    }
    layers.push(LayerSpec::new("Conv_1", &[7, 7, 1280], LayerKind::Conv));
    layers.push(LayerSpec::new("global_average_pooling", &[1280], LayerKind::Pool));
    layers.push(LayerSpec::new("predictions", &[1000], LayerKind::Classifier));

    for layer in &mut layers {
        if let Some(&(_, p1, p2)) =
            SPLIT_PART_SIZES.iter().find(|(name, _, _)| *name == layer.name)
        {
            *layer = layer.clone().with_part_sizes(p1, p2);
        }
    }

    ModelGraph::new("mobilenetv2_0.35_224", vec![224, 224, 3], layers)
        .expect("builtin catalog is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_contains_split_layers_with_exact_shapes() {
        let g = builtin_mobilenetv2_catalog();
        assert_eq!(g.layer("block_2_expand").unwrap().output_shape, vec![56, 56, 48]);
        assert_eq!(g.layer("block_15_project").unwrap().output_shape, vec![7, 7, 56]);
        assert_eq!(g.layer("block_16_project_BN").unwrap().output_shape, vec![7, 7, 112]);
    }

    #[test]
    fn builtin_split_layers_in_architectural_order() {
        let g = builtin_mobilenetv2_catalog();
        let i2 = g.layer_index("block_2_expand").unwrap();
        let i15 = g.layer_index("block_15_project").unwrap();
        let i16 = g.layer_index("block_16_project_BN").unwrap();
        assert!(i2 < i15);
        assert!(i15 < i16);
    }

    #[test]
    fn builtin_part_sizes_annotated() {
        let g = builtin_mobilenetv2_catalog();
        let l = g.layer("block_2_expand").unwrap();
        assert_eq!(l.part1_bytes, Some(752_600));
        assert_eq!(l.part2_bytes, Some(11_800_000));
        assert_eq!(g.layer("block_16_project_BN").unwrap().part1_bytes, Some(2_700_000));
    }

    #[test]
    fn activation_bytes_for_benchmarked_layers() {
        let g = builtin_mobilenetv2_catalog();
        assert_eq!(activation_bytes(&g, "block_2_expand", 1).unwrap(), 150_528);
        assert_eq!(activation_bytes(&g, "block_16_project_BN", 1).unwrap(), 5_488);
        // 7 * 7 * 56 by hand
        assert_eq!(activation_bytes(&g, "block_15_project", 1).unwrap(), 2_744);
    }

    #[test]
    fn activation_bytes_unknown_layer() {
        let g = builtin_mobilenetv2_catalog();
        assert!(matches!(
            activation_bytes(&g, "bogus", 1),
            Err(CatalogError::UnknownLayer { .. })
        ));
    }

    #[test]
    fn activation_bytes_scales_with_element_width() {
        let g = builtin_mobilenetv2_catalog();
        let one = activation_bytes(&g, "block_16_project_BN", 1).unwrap();
        let four = activation_bytes(&g, "block_16_project_BN", 4).unwrap();
        assert_eq!(four, 4 * one);
    }

    #[test]
    fn builtin_split_sizes_match_shape_products() {
        let g = builtin_mobilenetv2_catalog();
        for (name, _, _) in SPLIT_PART_SIZES {
            let l = g.layer(name).unwrap();
            let product: u64 = l.output_shape.iter().map(|&d| d as u64).product();
            assert_eq!(activation_bytes(&g, name, 1).unwrap(), product);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let layers = vec![
            LayerSpec::new("a", &[1], LayerKind::Other),
            LayerSpec::new("a", &[2], LayerKind::Other),
        ];
        assert!(matches!(
            ModelGraph::new("m", vec![1], layers),
            Err(CatalogError::DuplicateName { .. })
        ));
    }

    #[test]
    fn zero_dim_and_empty_shape_rejected() {
        let zero = vec![LayerSpec::new("z", &[4, 0], LayerKind::Other)];
        assert!(matches!(ModelGraph::new("m", vec![1], zero), Err(CatalogError::ZeroDim { .. })));
        let empty = vec![LayerSpec::new("e", &[], LayerKind::Other)];
        assert!(matches!(
            ModelGraph::new("m", vec![1], empty),
            Err(CatalogError::EmptyShape { .. })
        ));
    }

    #[test]
    fn doubling_one_dim_doubles_activation_bytes() {
        let base = ModelGraph::new(
            "m",
            vec![1],
            vec![LayerSpec::new("l", &[3, 5, 7], LayerKind::Other)],
        )
        .unwrap();
        let doubled = ModelGraph::new(
            "m",
            vec![1],
            vec![LayerSpec::new("l", &[3, 10, 7], LayerKind::Other)],
        )
        .unwrap();
        assert_eq!(
            activation_bytes(&doubled, "l", 1).unwrap(),
            2 * activation_bytes(&base, "l", 1).unwrap()
        );
    }
}
