use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Price;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("the main product `{0}` cannot be removed")]
    MainNotRemovable(String),
    #[error("redundant operation: `{0}` is already {1}")]
    RedundantOp(String, &'static str),
    #[error("bundle must contain exactly one main product, found {0}")]
    MainCount(usize),
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("item id must be non-empty")]
    EmptyId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductKind {
    Main,
    Accessory,
    Delivery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(rename = "price")]
    pub unit_price: Price,
    pub kind: ProductKind,
}

/// Adds or removes one item from the deal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "id", rename_all = "lowercase")]
pub enum BundleOp {
    Add(String),
    Remove(String),
}

impl BundleOp {
    pub fn item_id(&self) -> &str {
        match self {
            BundleOp::Add(id) | BundleOp::Remove(id) => id,
        }
    }
}

/// A main product plus optional items; `active` holds the ids currently in the deal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    #[serde(default)]
    pub id: String,
    pub items: Vec<Product>,
    pub active: BTreeSet<String>,
}

impl Bundle {
    /// A bundle with every item active.
    pub fn new(id: impl Into<String>, items: Vec<Product>) -> Result<Self, BundleError> {
        let active = items.iter().map(|p| p.id.clone()).collect();
        let bundle = Bundle {
            id: id.into(),
            items,
            active,
        };
        bundle.check()?;
        Ok(bundle)
    }

    pub fn check(&self) -> Result<(), BundleError> {
        let mut seen = BTreeSet::new();
        for p in &self.items {
            if p.id.is_empty() {
                return Err(BundleError::EmptyId);
            }
            if !seen.insert(p.id.as_str()) {
                return Err(BundleError::DuplicateItem(p.id.clone()));
            }
        }
        let mains = self
            .items
            .iter()
            .filter(|p| p.kind == ProductKind::Main)
            .count();
        if mains != 1 {
            return Err(BundleError::MainCount(mains));
        }
        if let Some(stray) = self.active.iter().find(|id| !seen.contains(id.as_str())) {
            return Err(BundleError::UnknownItem(stray.clone()));
        }
        Ok(())
    }

    pub fn main(&self) -> &Product {
        self.items
            .iter()
            .find(|p| p.kind == ProductKind::Main)
            .expect("validated bundle has a main product")
    }

    pub fn item(&self, id: &str) -> Option<&Product> {
        self.items.iter().find(|p| p.id == id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.contains(id)
    }

    pub fn price(&self) -> Price {
        bundle_price(self)
    }

    /// Active items in catalog order.
    pub fn active_items(&self) -> impl Iterator<Item = &Product> {
        self.items.iter().filter(|p| self.active.contains(&p.id))
    }

    /// Active items other than the main product.
    pub fn removable(&self) -> impl Iterator<Item = &Product> {
        self.active_items().filter(|p| p.kind != ProductKind::Main)
    }

    pub fn addable(&self) -> impl Iterator<Item = &Product> {
        self.items.iter().filter(|p| !self.active.contains(&p.id))
    }

    pub fn active_fraction(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.active.len() as f64 / self.items.len() as f64
    }

    pub fn apply(&self, op: &BundleOp) -> Result<Bundle, BundleError> {
        apply_bundle_op(self, op)
    }
}

/// Sum of unit prices over active items.
pub fn bundle_price(bundle: &Bundle) -> Price {
    bundle.active_items().map(|p| p.unit_price).sum()
}

pub fn apply_bundle_op(bundle: &Bundle, op: &BundleOp) -> Result<Bundle, BundleError> {
    let id = op.item_id();
    let item = bundle
        .item(id)
        .ok_or_else(|| BundleError::UnknownItem(id.to_string()))?;
    let mut next = bundle.clone();
    match op {
        BundleOp::Add(_) => {
            if !next.active.insert(id.to_string()) {
                return Err(BundleError::RedundantOp(id.to_string(), "active"));
            }
        }
        BundleOp::Remove(_) => {
            if item.kind == ProductKind::Main {
                return Err(BundleError::MainNotRemovable(id.to_string()));
            }
            if !next.active.remove(id) {
                return Err(BundleError::RedundantOp(id.to_string(), "inactive"));
            }
        }
    }
    Ok(next)
}
