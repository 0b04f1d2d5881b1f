use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flate2::read::GzDecoder;
use hypergcl::config::hex_digest;
use hypergcl::data::convert_linqs;

const LINQS_BASE: &str = "https://linqs-data.soe.ucsc.edu/public/lbc";

fn data_root(out_dir: Option<PathBuf>) -> PathBuf {
    out_dir
        .or_else(|| std::env::var_os("HYPERGCL_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn download(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut bytes = Vec::new();
    resp.into_body().into_reader().read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Checks `bytes` against an expected digest, or against the sidecar written
/// by an earlier fetch. A first fetch without `--sha256` records the sidecar.
fn check_digest(bytes: &[u8], expected: Option<&str>, sidecar: &Path) -> Result<String> {
    let actual = hex_digest(bytes);
    let pinned = match expected {
        Some(e) => Some(e.trim().to_ascii_lowercase()),
        None => fs::read_to_string(sidecar).ok().and_then(|s| s.split_whitespace().next().map(str::to_string)),
    };
    match pinned {
        Some(p) if p != actual => bail!("checksum mismatch: expected {p}, archive has {actual}"),
        Some(_) => {}
        None => log::warn!("no pinned checksum; recording {actual} in {}", sidecar.display()),
    }
    Ok(actual)
}

/// Unpacks the `.content` and `.cites` members into `raw_dir`.
fn unpack(bytes: &[u8], name: &str, raw_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(raw_dir)?;
    let mut archive = tar::Archive::new(GzDecoder::new(bytes));
    let (content, cites) = (raw_dir.join(format!("{name}.content")), raw_dir.join(format!("{name}.cites")));
    let mut found = (false, false);
    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        if file == format!("{name}.content") {
            entry.unpack(&content)?;
            found.0 = true;
        } else if file == format!("{name}.cites") {
            entry.unpack(&cites)?;
            found.1 = true;
        }
    }
    if !(found.0 && found.1) {
        bail!("archive lacks {name}.content or {name}.cites");
    }
    Ok((content, cites))
}

pub fn fetch_data(name: &str, out_dir: Option<PathBuf>, expected: Option<&str>) -> Result<()> {
    let root = data_root(out_dir);
    let raw_dir = root.join("raw");
    fs::create_dir_all(&raw_dir).with_context(|| format!("creating {}", raw_dir.display()))?;
    let archive_path = raw_dir.join(format!("{name}.tgz"));
    let sidecar = raw_dir.join(format!("{name}.tgz.sha256"));
    let bytes = match fs::read(&archive_path) {
        Ok(b) => b,
        Err(_) => {
            let url = format!("{LINQS_BASE}/{name}.tgz");
            log::info!("downloading {url}");
            let b = download(&url)?;
            fs::write(&archive_path, &b)?;
            b
        }
    };
    let digest = check_digest(&bytes, expected, &sidecar)?;
    fs::write(&sidecar, format!("{digest}  {name}.tgz\n"))?;
    let (content, cites) = unpack(&bytes, name, &raw_dir)?;
    let ds = convert_linqs(&content, &cites, &root.join(name))?;
    println!(
        "{name}: {} nodes, {} edges, {} features, {} classes -> {}",
        ds.num_nodes(),
        ds.graph.num_edges(),
        ds.features.dim(),
        ds.num_classes(),
        root.join(name).display()
    );
    Ok(())
}
