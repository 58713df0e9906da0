//! The MVDS on-disk format.
//!
//! A matrix file is the ASCII magic `MVDS`, then little-endian `u32` version
//! (1), rows and cols, then rows × cols little-endian `f64` in row-major
//! order. A dataset is a directory holding `manifest.txt` (flat `key=value`
//! lines), one matrix file per view, an optional labels file (N little-endian
//! `u32`) and a mask file (N × V bytes, 1 = observed).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MVDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
pub const MANIFEST: &str = "manifest.txt";
pub const MATRIX_EXT: &str = "mvds";

pub fn encode_matrix(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |offset: usize, detail: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!(
                "truncated header: expected {HEADER_LEN} bytes, got {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(8, format!("shape {rows}x{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!(
                "{rows}x{cols} matrix needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(rows, cols, data)
}

pub fn write_matrix(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(t)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

pub fn write_u32s(path: &Path, values: &[usize]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as u32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_u32s(path: &Path, expected: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected * 4),
            detail: format!("expected {} bytes, file has {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

/// Parses flat `key=value` text; `#` starts a comment line.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    detail: format!("expected key=value, got {trimmed:?}"),
                });
            };
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    detail: format!("duplicate key {:?}", k.trim()),
                });
            }
        }
        offset += line.len();
    }
    Ok(map)
}

fn manifest_text(ds: &MultiViewDataset, config_hash: Option<&str>) -> String {
    let join = |xs: Vec<String>| xs.join(",");
    let mut s = String::from("# MVDS dataset manifest\n");
    if let Some(h) = config_hash {
        s += &format!("config_hash={h}\n");
    }
    s += &format!("name={}\n", ds.name);
    s += &format!("views={}\n", ds.n_views());
    s += &format!("samples={}\n", ds.n_samples());
    s += &format!("clusters={}\n", ds.n_clusters);
    s += &format!(
        "view_dims={}\n",
        join(ds.view_dims().iter().map(usize::to_string).collect())
    );
    s += &format!(
        "view_files={}\n",
        join((0..ds.n_views()).map(view_file_name).collect())
    );
    if ds.labels.is_some() {
        s += "labels_file=labels.bin\n";
    }
    s += "mask_file=mask.bin\n";
    s
}

fn view_file_name(v: usize) -> String {
    format!("view{v}.{MATRIX_EXT}")
}

pub fn save_dataset(ds: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    save_dataset_tagged(ds, dir, None)
}

/// Like [`save_dataset`], recording the hash of the config that produced it.
pub fn save_dataset_tagged(
    ds: &MultiViewDataset,
    dir: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST);
    fs::write(&manifest, manifest_text(ds, config_hash)).map_err(|e| Error::io(&manifest, e))?;
    for (v, view) in ds.views.iter().enumerate() {
        write_matrix(dir.join(view_file_name(v)), view)?;
    }
    if let Some(labels) = &ds.labels {
        write_u32s(&dir.join("labels.bin"), labels)?;
    }
    let mask: Vec<u8> = ds
        .mask
        .iter()
        .flat_map(|row| row.iter().map(|&m| m as u8))
        .collect();
    let mask_path = dir.join("mask.bin");
    fs::write(&mask_path, mask).map_err(|e| Error::io(&mask_path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let kv = parse_key_values(&text, &manifest_path)?;
    let inconsistent = |detail: String| Error::Consistency {
        path: manifest_path.clone(),
        detail,
    };
    let get = |key: &str| {
        kv.get(key)
            .ok_or_else(|| inconsistent(format!("missing key {key:?}")))
    };
    let number = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| inconsistent(format!("{key} is not a count")))
    };

    let n_views = number("views")?;
    let n = number("samples")?;
    let k = number("clusters")?;
    let dims: Vec<usize> = get("view_dims")?
        .split(',')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| inconsistent("view_dims must be comma-separated counts".into()))?;
    let files: Vec<&str> = get("view_files")?.split(',').map(str::trim).collect();
    if dims.len() != n_views || files.len() != n_views {
        return Err(inconsistent(format!(
            "manifest declares {n_views} views but lists {} dims and {} files",
            dims.len(),
            files.len()
        )));
    }
    let present = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == MATRIX_EXT))
        .count();
    if present != n_views {
        return Err(Error::Consistency {
            path: dir.to_path_buf(),
            detail: format!("manifest declares {n_views} views but {present} matrix files are present"),
        });
    }

    let mut views = Vec::with_capacity(n_views);
    for (v, (file, &dim)) in files.iter().zip(&dims).enumerate() {
        let path = dir.join(file);
        let t = read_matrix(&path)?;
        if t.shape() != (n, dim) {
            return Err(Error::Consistency {
                path,
                detail: format!(
                    "view {v} is {:?}, manifest declares ({n}, {dim})",
                    t.shape()
                ),
            });
        }
        views.push(t);
    }

    let labels = match kv.get("labels_file") {
        Some(f) => Some(read_u32s(&dir.join(f), n)?),
        None => None,
    };
    let mask = match kv.get("mask_file") {
        Some(f) => {
            let path = dir.join(f);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != n * n_views {
                return Err(Error::Format {
                    path,
                    offset: bytes.len().min(n * n_views),
                    detail: format!(
                        "mask needs {} bytes, file has {}",
                        n * n_views,
                        bytes.len()
                    ),
                });
            }
            if let Some(pos) = bytes.iter().position(|&b| b > 1) {
                return Err(Error::Format {
                    path,
                    offset: pos,
                    detail: format!("mask byte {} is not 0 or 1", bytes[pos]),
                });
            }
            bytes
                .chunks_exact(n_views)
                .map(|row| row.iter().map(|&b| b == 1).collect())
                .collect()
        }
        None => vec![vec![true; n_views]; n],
    };

    let ds = MultiViewDataset {
        name: kv.get("name").cloned().unwrap_or_default(),
        views,
        labels,
        n_clusters: k,
        mask,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_missing_mask, generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn sample() -> MultiViewDataset {
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: 40,
            ..SyntheticSpec::default()
        })
        .unwrap();
        apply_missing_mask(&ds, 0.3, 1).unwrap()
    }

    #[test]
    fn round_trip_is_identity_and_byte_stable() {
        let ds = sample();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_dataset(&ds, a.path()).unwrap();
        let loaded = load_dataset(a.path()).unwrap();
        assert_eq!(loaded, ds);
        save_dataset(&loaded, b.path()).unwrap();
        for f in ["manifest.txt", "view0.mvds", "view2.mvds", "labels.bin", "mask.bin"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn truncated_matrix_reports_byte_counts() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("view1.mvds");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }), "{msg}");
        assert!(msg.contains(&bytes.len().to_string()), "{msg}");
        assert!(msg.contains(&(bytes.len() - 5).to_string()), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        let p = Path::new("m");
        let mut bytes = encode_matrix(&Tensor::ones(2, 2));
        bytes[4] = 2;
        assert!(matches!(decode_matrix(&bytes, p), Err(Error::Format { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_matrix(&bytes, p), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_matrix(&bytes[..7], p), Err(Error::Format { offset: 7, .. })));
    }

    #[test]
    fn extra_matrix_file_is_inconsistent() {
        let mut ds = sample();
        ds.views.truncate(2);
        for row in &mut ds.mask {
            row.truncate(2);
            if !row.iter().any(|&m| m) {
                row[0] = true;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        write_matrix(dir.path().join("view2.mvds"), &Tensor::ones(40, 3)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Consistency { .. }), "{err}");
        assert!(err.to_string().contains("2 views but 3"), "{err}");
    }

    #[test]
    fn view_shape_must_match_manifest() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        write_matrix(dir.path().join("view0.mvds"), &Tensor::ones(40, 3)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Consistency { .. })));
    }

    proptest! {
        #[test]
        fn matrix_codec_round_trips(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let t = Tensor::from_fn(rows, cols, |r, c| {
                f64::from_bits(seed.wrapping_mul(31 + r as u64).wrapping_add(c as u64) >> 2)
            });
            let back = decode_matrix(&encode_matrix(&t), Path::new("x")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
