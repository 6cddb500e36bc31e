#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use psychoprobe_core::inventory::Inventory;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn toy() -> Arc<Inventory> {
    Arc::new(Inventory::load(fixture("toy_inventory.json")).expect("toy inventory loads"))
}

pub fn mfq_shaped() -> Arc<Inventory> {
    Arc::new(Inventory::load(fixture("mfq_shaped.json")).expect("mfq-shaped inventory loads"))
}
