use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use til_core::tilmap::read_probability_map;
use til_review::store::{Store, StoreConfig};

use crate::paths::stem;

#[derive(Args)]
pub struct AddMapArgs {
    #[arg(long, env = "TIL_STORE")]
    store: PathBuf,
    /// Probability TIL map file.
    #[arg(long)]
    map: PathBuf,
    /// Defaults to the map file stem.
    #[arg(long)]
    map_id: Option<String>,
    /// Slide image used for boundary thumbnails, copied to `slides/<slide_id>.png`.
    #[arg(long)]
    slide: Option<PathBuf>,
}

pub fn add_map(args: AddMapArgs) -> anyhow::Result<()> {
    let store = Store::open(StoreConfig::new(&args.store))?;
    let map = read_probability_map(&args.map)?;
    let map_id = args.map_id.unwrap_or_else(|| stem(&args.map));
    store.add_map(&map_id, &map)?;
    if let Some(slide) = &args.slide {
        let dest = store.root().join("slides").join(format!("{}.png", map.slide_id));
        std::fs::create_dir_all(dest.parent().expect("joined path has a parent"))?;
        std::fs::copy(slide, &dest).with_context(|| format!("copying {} to {}", slide.display(), dest.display()))?;
    }
    crate::emit(&map_id)
}

#[derive(Args)]
pub struct ServeArgs {
    /// Store directory holding maps/, slides/, sessions/ and manifests/.
    #[arg(long, env = "TIL_STORE")]
    store: PathBuf,
    #[arg(long, env = "TIL_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Upper bound on cells in a preview raster.
    #[arg(long, env = "TIL_PREVIEW_CELLS", default_value_t = StoreConfig::DEFAULT_PREVIEW_CELLS)]
    preview_cells: u64,
    /// Prefix written into committed records' patch_uri.
    #[arg(long, env = "TIL_PATCH_ROOT")]
    patch_root: Option<String>,
}

pub fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let store = Store::open(StoreConfig {
        root: args.store,
        preview_cells: args.preview_cells,
        patch_root: args.patch_root,
    })?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(til_review::api::serve(Arc::new(store), args.listen))?;
    Ok(())
}
