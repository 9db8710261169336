//! Multimodal item embedding fusion.
//!
//! | strategy | fused vector                                   | width             |
//! |----------|------------------------------------------------|-------------------|
//! | V1       | `norm(PCA_text(t))`                            | `k_text`          |
//! | V2       | `norm(PCA_image(i))`                           | `k_image`         |
//! | V3       | `norm(PCA_joint(t ‖ i))`                       | `k_text + k_image`|
//! | V4       | `norm(PCA_text(t)) ‖ norm(PCA_image(i))`       | `k_text + k_image`|
//!
//! `norm` is per-item L2 normalization; zero rows are left at zero.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::{pca_fit, PcaModel};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    V1,
    V2,
    V3,
    V4,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::V1, Strategy::V2, Strategy::V3, Strategy::V4];

    pub fn output_width(self, k_text: usize, k_image: usize) -> usize {
        match self {
            Strategy::V1 => k_text,
            Strategy::V2 => k_image,
            Strategy::V3 | Strategy::V4 => k_text + k_image,
        }
    }

    fn needs_text(self) -> bool {
        self != Strategy::V2
    }

    fn needs_image(self) -> bool {
        self != Strategy::V1
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::V1 => "v1",
            Strategy::V2 => "v2",
            Strategy::V3 => "v3",
            Strategy::V4 => "v4",
        };
        f.write_str(s)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Strategy::V1),
            "v2" => Ok(Strategy::V2),
            "v3" => Ok(Strategy::V3),
            "v4" => Ok(Strategy::V4),
            other => Err(Error::invalid(format!("unknown strategy {other:?} (expected v1..v4)"))),
        }
    }
}

/// Precomputed encoder output for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct RawModalityTable {
    pub item_ids: Vec<String>,
    /// `[n × D]`
    pub vectors: Tensor,
    pub modality: Modality,
}

impl RawModalityTable {
    pub fn new(item_ids: Vec<String>, vectors: Tensor, modality: Modality) -> Result<Self> {
        check_rows(&item_ids, &vectors)?;
        Ok(Self {
            item_ids,
            vectors,
            modality,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Fused, fixed-width item vectors ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddingTable {
    pub item_ids: Vec<String>,
    /// `[n × d_fused]`
    pub vectors: Tensor,
    /// `None` for tables loaded from a file without a strategy tag.
    pub strategy: Option<Strategy>,
}

impl ItemEmbeddingTable {
    pub fn width(&self) -> usize {
        self.vectors.cols()
    }
}

fn check_rows(item_ids: &[String], vectors: &Tensor) -> Result<()> {
    if vectors.rank() != 2 || vectors.rows() != item_ids.len() {
        return Err(Error::dim(
            "modality table",
            format!("{} ids for vectors {:?}", item_ids.len(), vectors.shape()),
        ));
    }
    Ok(())
}

/// The PCA projections a strategy fitted; can be re-applied to new items.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionModel {
    Text(PcaModel),
    Image(PcaModel),
    Joint(PcaModel),
    Separate { text: PcaModel, image: PcaModel },
}

impl FusionModel {
    pub fn strategy(&self) -> Strategy {
        match self {
            FusionModel::Text(_) => Strategy::V1,
            FusionModel::Image(_) => Strategy::V2,
            FusionModel::Joint(_) => Strategy::V3,
            FusionModel::Separate { .. } => Strategy::V4,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            FusionModel::Text(m) | FusionModel::Image(m) | FusionModel::Joint(m) => m.output_dim(),
            FusionModel::Separate { text, image } => text.output_dim() + image.output_dim(),
        }
    }

    /// Fuses rows of aligned text/image matrices (the ones this strategy needs).
    pub fn apply(&self, text: Option<&Tensor>, image: Option<&Tensor>) -> Result<Tensor> {
        let strategy = self.strategy();
        fn need<'a>(t: Option<&'a Tensor>, what: &str, strategy: Strategy) -> Result<&'a Tensor> {
            t.ok_or_else(|| Error::invalid(format!("{strategy} strategy needs {what} vectors")))
        }
        match self {
            FusionModel::Text(m) => Ok(l2_normalize_rows(m.transform(need(text, "text", strategy)?)?)),
            FusionModel::Image(m) => Ok(l2_normalize_rows(m.transform(need(image, "image", strategy)?)?)),
            FusionModel::Joint(m) => {
                let joint = hconcat(need(text, "text", strategy)?, need(image, "image", strategy)?)?;
                Ok(l2_normalize_rows(m.transform(&joint)?))
            }
            FusionModel::Separate { text: mt, image: mi } => {
                let t = l2_normalize_rows(mt.transform(need(text, "text", strategy)?)?);
                let i = l2_normalize_rows(mi.transform(need(image, "image", strategy)?)?);
                hconcat(&t, &i)
            }
        }
    }
}

/// Row-wise concatenation `[a ‖ b]`.
pub fn hconcat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
        return Err(Error::dim("hconcat", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..a.rows() {
        out.extend_from_slice(a.row(i));
        out.extend_from_slice(b.row(i));
    }
    Tensor::new(&[a.rows(), a.cols() + b.cols()], out)
}

pub fn l2_normalize_rows(mut t: Tensor) -> Tensor {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    t
}

/// Reorders `image` rows to follow `text`'s item order; the id sets must match.
fn align_image(text: &RawModalityTable, image: &RawModalityTable) -> Result<Tensor> {
    if text.item_ids.len() != image.item_ids.len() {
        return Err(Error::invalid(format!(
            "item id sets differ: {} text items vs {} image items",
            text.item_ids.len(),
            image.item_ids.len()
        )));
    }
    let pos: HashMap<&str, usize> = image
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if pos.len() != image.item_ids.len() {
        return Err(Error::invalid("duplicate item id in image table"));
    }
    let mut out = Vec::with_capacity(image.vectors.len());
    for id in &text.item_ids {
        let &row = pos
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("item id sets differ: {id:?} has no image vector")))?;
        out.extend_from_slice(image.vectors.row(row));
    }
    Tensor::new(image.vectors.shape(), out)
}

fn check_k(k: usize, table: &RawModalityTable, name: &str) -> Result<()> {
    let bound = table.dim().min(table.item_ids.len());
    if k == 0 || k > bound {
        return Err(Error::invalid(format!(
            "k-{name} = {k} out of range: must be in 1..={bound} ({name} dimension {}, {} items)",
            table.dim(),
            table.item_ids.len()
        )));
    }
    Ok(())
}

fn require<'a>(t: Option<&'a RawModalityTable>, strategy: Strategy, what: &str) -> Result<&'a RawModalityTable> {
    t.ok_or_else(|| Error::invalid(format!("strategy {strategy} needs a {what} table")))
}

/// Fitted model, item order, and the aligned text/image matrices it was fit on.
pub type FittedFusion = (FusionModel, Vec<String>, Option<Tensor>, Option<Tensor>);

/// Fits the PCA(s) for `strategy` and returns them with the aligned inputs.
pub fn fit_fusion(
    text: Option<&RawModalityTable>,
    image: Option<&RawModalityTable>,
    strategy: Strategy,
    k_text: usize,
    k_image: usize,
) -> Result<FittedFusion> {
    let text = if strategy.needs_text() {
        Some(require(text, strategy, "text")?)
    } else {
        None
    };
    let image = if strategy.needs_image() {
        Some(require(image, strategy, "image")?)
    } else {
        None
    };
    if let Some(t) = text {
        check_k(k_text, t, "text")?;
    }
    if let Some(i) = image {
        check_k(k_image, i, "image")?;
    }

    let (ids, text_m, image_m) = match (text, image) {
        (Some(t), Some(i)) => (t.item_ids.clone(), Some(t.vectors.clone()), Some(align_image(t, i)?)),
        (Some(t), None) => (t.item_ids.clone(), Some(t.vectors.clone()), None),
        (None, Some(i)) => (i.item_ids.clone(), None, Some(i.vectors.clone())),
        (None, None) => unreachable!("every strategy needs a modality"),
    };

    let model = match strategy {
        Strategy::V1 => FusionModel::Text(pca_fit(text_m.as_ref().unwrap(), k_text)?),
        Strategy::V2 => FusionModel::Image(pca_fit(image_m.as_ref().unwrap(), k_image)?),
        Strategy::V3 => {
            let joint = hconcat(text_m.as_ref().unwrap(), image_m.as_ref().unwrap())?;
            let k = k_text + k_image;
            if k > joint.cols().min(joint.rows()) {
                return Err(Error::invalid(format!(
                    "k-text + k-image = {k} exceeds joint bound {}",
                    joint.cols().min(joint.rows())
                )));
            }
            FusionModel::Joint(pca_fit(&joint, k)?)
        }
        Strategy::V4 => FusionModel::Separate {
            text: pca_fit(text_m.as_ref().unwrap(), k_text)?,
            image: pca_fit(image_m.as_ref().unwrap(), k_image)?,
        },
    };
    Ok((model, ids, text_m, image_m))
}

/// Builds the fused item table for `strategy`. V1 only reads `text`, V2 only
/// `image`; V3/V4 need both with identical item-id sets (image rows are
/// reordered to the text order).
pub fn fuse_embeddings(
    text: Option<&RawModalityTable>,
    image: Option<&RawModalityTable>,
    strategy: Strategy,
    k_text: usize,
    k_image: usize,
) -> Result<ItemEmbeddingTable> {
    let (model, item_ids, t, i) = fit_fusion(text, image, strategy, k_text, k_image)?;
    let vectors = model.apply(t.as_ref(), i.as_ref())?;
    assert_eq!(
        vectors.cols(),
        strategy.output_width(k_text, k_image),
        "fused width must follow the strategy"
    );
    Ok(ItemEmbeddingTable {
        item_ids,
        vectors,
        strategy: Some(strategy),
    })
}
