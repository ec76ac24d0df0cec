use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Bundle, BundleError, Product, ProductKind};

const BUILTIN: &str = include_str!("../../fixtures/catalog.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate product id `{0}`")]
    DuplicateId(String),
    #[error("product `{main}` lists unknown accessory `{accessory}`")]
    UnknownAccessory { main: String, accessory: String },
    #[error("catalog has no main products")]
    Empty,
    #[error("unknown bundle `{0}`")]
    UnknownBundle(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(flatten)]
    pub product: Product,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accessories: Vec<String>,
}

/// Products and the accessory lists that define each main product's bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub products: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let catalog: Catalog = serde_json::from_str(text)?;
        catalog.check()?;
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Ten electronics products with accessories and delivery options.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled catalog is valid")
    }

    fn check(&self) -> Result<(), CatalogError> {
        let mut ids = BTreeSet::new();
        for e in &self.products {
            if !ids.insert(e.product.id.as_str()) {
                return Err(CatalogError::DuplicateId(e.product.id.clone()));
            }
        }
        for e in &self.products {
            if let Some(missing) = e.accessories.iter().find(|a| !ids.contains(a.as_str())) {
                return Err(CatalogError::UnknownAccessory {
                    main: e.product.id.clone(),
                    accessory: missing.clone(),
                });
            }
        }
        if self.main_products().next().is_none() {
            return Err(CatalogError::Empty);
        }
        for main in self.main_products() {
            self.build(main)?;
        }
        Ok(())
    }

    fn main_products(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.products
            .iter()
            .filter(|e| e.product.kind == ProductKind::Main)
    }

    fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.products.iter().find(|e| e.product.id == id)
    }

    fn build(&self, main: &CatalogEntry) -> Result<Bundle, CatalogError> {
        let mut items = vec![main.product.clone()];
        for id in &main.accessories {
            let entry = self.get(id).ok_or_else(|| CatalogError::UnknownAccessory {
                main: main.product.id.clone(),
                accessory: id.clone(),
            })?;
            items.push(entry.product.clone());
        }
        Ok(Bundle::new(main.product.id.clone(), items)?)
    }

    pub fn bundle_ids(&self) -> Vec<String> {
        self.main_products().map(|e| e.product.id.clone()).collect()
    }

    /// The full bundle for a main product, every item active.
    pub fn bundle(&self, id: &str) -> Result<Bundle, CatalogError> {
        let main = self
            .main_products()
            .find(|e| e.product.id == id)
            .ok_or_else(|| CatalogError::UnknownBundle(id.to_string()))?;
        self.build(main)
    }

    pub fn bundles(&self) -> Vec<Bundle> {
        self.main_products()
            .map(|m| self.build(m).expect("checked at load"))
            .collect()
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
