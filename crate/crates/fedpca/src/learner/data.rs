//! Datasets: IDX ingestion, label-sorted shard partitioning, synthetic
//! cluster data, and a small columnar binary format.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Fixed-width feature vectors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u8>,
    classes: u16,
    name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<u8>,
        classes: u16,
        name: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "feature buffer holds {} values but {} labels x dim {} requires {}",
                features.len(),
                labels.len(),
                dim,
                labels.len() * dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as u16 >= classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside declared class count {classes}"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// New dataset from a subset of rows.
    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::IndexOutOfBounds {
                    index: r,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.feature(r));
            labels.push(self.labels[r]);
        }
        Dataset::new(features, self.dim, labels, self.classes, name)
    }
}

/// Raw contents of one IDX file.
#[derive(Debug, Clone)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn idx_err(path: &Path, reason: impl Into<String>, offset: u64) -> Error {
    Error::IdxFormat {
        path: path.display().to_string(),
        reason: reason.into(),
        offset,
    }
}

/// Parse an IDX file (optionally gzip-compressed): big-endian magic
/// `[0, 0, 0x08, ndims]` followed by the dimension sizes and raw bytes.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut head = [0u8; 2];
    reader.read_exact(&mut head).map_err(|_| {
        idx_err(path, "file shorter than a 2-byte magic prefix", 0)
    })?;
    let mut bytes: Vec<u8> = Vec::new();
    if head == [0x1f, 0x8b] {
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        let mut raw = Vec::with_capacity(rest.len() + 2);
        raw.extend_from_slice(&head);
        raw.extend_from_slice(&rest);
        let mut gz = flate2::read::GzDecoder::new(&raw[..]);
        gz.read_to_end(&mut bytes)
            .map_err(|e| idx_err(path, format!("gzip decode failed: {e}"), 0))?;
    } else {
        bytes.extend_from_slice(&head);
        reader.read_to_end(&mut bytes)?;
    }

    if bytes.len() < 4 {
        return Err(idx_err(path, "truncated magic number", bytes.len() as u64));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(
            path,
            format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1]),
            0,
        ));
    }
    if bytes[2] != 0x08 {
        return Err(idx_err(
            path,
            format!("unsupported element type 0x{:02x} (only ubyte)", bytes[2]),
            2,
        ));
    }
    let ndims = bytes[3] as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(idx_err(
            path,
            format!(
                "truncated header: expected {header_len} bytes, got {}",
                bytes.len()
            ),
            bytes.len() as u64,
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        let v = u32::from_be_bytes([
            bytes[off],
            bytes[off + 1],
            bytes[off + 2],
            bytes[off + 3],
        ]) as usize;
        dims.push(v);
    }
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header_len;
    if actual != expected {
        return Err(idx_err(
            path,
            format!("payload holds {actual} bytes, expected {expected}"),
            header_len as u64,
        ));
    }
    let payload = bytes[header_len..].to_vec();
    match ndims {
        1 => Ok(IdxData::Labels(payload)),
        3 => Ok(IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload,
        }),
        other => Err(idx_err(
            path,
            format!("unsupported dimensionality {other} (labels=1, images=3)"),
            3,
        )),
    }
}

/// Pair an IDX image file with an IDX label file into a dataset with pixel
/// values scaled to [0, 1].
pub fn mnist_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    name: impl Into<String>,
) -> Result<Dataset> {
    let images = load_idx(images_path.as_ref())?;
    let labels = load_idx(labels_path.as_ref())?;
    let (count, dim, pixels) = match images {
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows * cols, pixels),
        IdxData::Labels(_) => {
            return Err(Error::Dataset(format!(
                "{} is a label file, expected images",
                images_path.as_ref().display()
            )))
        }
    };
    let labels = match labels {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => {
            return Err(Error::Dataset(format!(
                "{} is an image file, expected labels",
                labels_path.as_ref().display()
            )))
        }
    };
    if labels.len() != count {
        return Err(Error::Dataset(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let features: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(features, dim, labels, 10, name)
}

/// Sort by label, cut into equal contiguous shards, and hand each client
/// `shards_per_client` shards drawn without replacement.
pub fn shard_partition<R: Rng + ?Sized>(
    ds: &Dataset,
    num_shards: usize,
    shards_per_client: usize,
    num_clients: usize,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if num_shards == 0 || shards_per_client == 0 || num_clients == 0 {
        return Err(Error::Dataset(
            "shard counts and client count must be positive".into(),
        ));
    }
    if ds.len() % num_shards != 0 {
        return Err(Error::Dataset(format!(
            "{} items cannot be divided into {num_shards} equal shards",
            ds.len()
        )));
    }
    if num_clients * shards_per_client > num_shards {
        return Err(Error::Dataset(format!(
            "{num_clients} clients x {shards_per_client} shards need more than \
             the {num_shards} available shards"
        )));
    }
    let shard_size = ds.len() / num_shards;
    // Stable sort on label keeps the within-label order deterministic.
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| ds.label(i));

    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(rng);

    let mut out = Vec::with_capacity(num_clients);
    for c in 0..num_clients {
        let mut rows = Vec::with_capacity(shards_per_client * shard_size);
        for s in 0..shards_per_client {
            let shard = shard_ids[c * shards_per_client + s];
            rows.extend_from_slice(&order[shard * shard_size..(shard + 1) * shard_size]);
        }
        out.push(ds.subset(&rows, format!("{}-client{}", ds.name(), c))?);
    }
    Ok(out)
}

/// Gaussian class clusters with a per-client label skew knob:
/// `heterogeneity = 0` gives every client the uniform label distribution,
/// `1` makes each client single-label.
pub fn synth_dataset<R: Rng + ?Sized>(
    num_clients: usize,
    dims: usize,
    classes: u16,
    heterogeneity: f64,
    samples_per_client: usize,
    test_size: usize,
    rng: &mut R,
) -> Result<(Vec<Dataset>, Dataset)> {
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(Error::Dataset(format!(
            "heterogeneity must lie in [0, 1], got {heterogeneity}"
        )));
    }
    if num_clients == 0 || dims == 0 || classes < 2 || samples_per_client == 0 || test_size == 0 {
        return Err(Error::Dataset(
            "synthetic dataset needs positive sizes and at least 2 classes".into(),
        ));
    }
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    // Class means drawn once; separation 3 keeps clusters learnable.
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| 3.0 * normal.sample(rng)).collect())
        .collect();

    let sample_row = |label: u8, rng: &mut R| -> Vec<f32> {
        means[label as usize]
            .iter()
            .map(|&m| (m + normal.sample(rng)) as f32)
            .collect()
    };

    let k = classes as usize;
    let mut client_sets = Vec::with_capacity(num_clients);
    for c in 0..num_clients {
        let home = (c % k) as u8;
        let mut features = Vec::with_capacity(samples_per_client * dims);
        let mut labels = Vec::with_capacity(samples_per_client);
        for _ in 0..samples_per_client {
            let label = if rng.random::<f64>() < heterogeneity {
                home
            } else {
                rng.random_range(0..k) as u8
            };
            features.extend_from_slice(&sample_row(label, rng));
            labels.push(label);
        }
        client_sets.push(Dataset::new(
            features,
            dims,
            labels,
            classes,
            format!("synthetic-client{c}"),
        )?);
    }

    let mut features = Vec::with_capacity(test_size * dims);
    let mut labels = Vec::with_capacity(test_size);
    for _ in 0..test_size {
        let label = rng.random_range(0..k) as u8;
        features.extend_from_slice(&sample_row(label, rng));
        labels.push(label);
    }
    let test = Dataset::new(features, dims, labels, classes, "synthetic-test")?;
    Ok((client_sets, test))
}

const DATASET_MAGIC: &[u8; 4] = b"FDS1";

/// Write the columnar binary format: magic, header {dims, count, classes},
/// then labels and little-endian f32 features.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(DATASET_MAGIC)?;
    f.write_all(&(ds.dim() as u32).to_le_bytes())?;
    f.write_all(&(ds.len() as u32).to_le_bytes())?;
    f.write_all(&(ds.classes() as u32).to_le_bytes())?;
    f.write_all(ds.labels())?;
    let mut buf = Vec::with_capacity(ds.features.len() * 4);
    for v in &ds.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read the columnar binary format written by [`save_dataset`].
pub fn load_dataset(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Dataset> {
    let mut f = File::open(path.as_ref())?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != DATASET_MAGIC {
        return Err(Error::Dataset(format!(
            "{} is not a columnar dataset file",
            path.as_ref().display()
        )));
    }
    let read_u32 =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let dims = read_u32(4) as usize;
    let count = read_u32(8) as usize;
    let classes = read_u32(12) as u16;
    let expected = 16 + count + count * dims * 4;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: expected {expected} bytes, got {}",
            path.as_ref().display(),
            bytes.len()
        )));
    }
    let labels = bytes[16..16 + count].to_vec();
    let mut features = Vec::with_capacity(count * dims);
    let base = 16 + count;
    for i in 0..count * dims {
        let o = base + 4 * i;
        features.push(f32::from_le_bytes([
            bytes[o],
            bytes[o + 1],
            bytes[o + 2],
            bytes[o + 3],
        ]));
    }
    Dataset::new(features, dims, labels, classes, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use std::collections::HashSet;

    fn toy_dataset(n: usize, classes: u16) -> Dataset {
        let labels: Vec<u8> = (0..n).map(|i| (i % classes as usize) as u8).collect();
        let features: Vec<f32> = (0..n * 2).map(|i| i as f32).collect();
        Dataset::new(features, 2, labels, classes, "toy").unwrap()
    }

    #[test]
    fn shards_conserve_and_partition_the_dataset() {
        let ds = toy_dataset(60, 3);
        let mut rng = rng_for(51, &[]);
        let parts = shard_partition(&ds, 12, 2, 6, &mut rng).unwrap();
        assert_eq!(parts.len(), 6);
        let mut seen: HashSet<(u32, u32)> = HashSet::new();
        let mut total = 0;
        for p in &parts {
            assert_eq!(p.len(), 10);
            total += p.len();
            for i in 0..p.len() {
                let key = (p.feature(i)[0] as u32, p.feature(i)[1] as u32);
                assert!(seen.insert(key), "row duplicated across shards");
            }
        }
        assert_eq!(total, 60);
    }

    #[test]
    fn single_shard_clients_are_single_label() {
        // 4 items, 2 labels, 2 shards, 2 clients, 1 shard each: sorting by
        // label forces each shard (and so each client) to one label.
        let labels = vec![0u8, 1, 0, 1];
        let features = vec![0.0f32; 8];
        let ds = Dataset::new(features, 2, labels, 2, "tiny").unwrap();
        let mut rng = rng_for(52, &[]);
        let parts = shard_partition(&ds, 2, 1, 2, &mut rng).unwrap();
        for p in &parts {
            let first = p.label(0);
            assert!(p.labels().iter().all(|&l| l == first));
        }
    }

    #[test]
    fn shard_partition_rejects_bad_arithmetic() {
        let ds = toy_dataset(60, 3);
        let mut rng = rng_for(53, &[]);
        assert!(shard_partition(&ds, 7, 2, 3, &mut rng).is_err());
        assert!(shard_partition(&ds, 12, 2, 7, &mut rng).is_err());
    }

    #[test]
    fn synthetic_iid_labels_are_roughly_uniform() {
        let mut rng = rng_for(54, &[]);
        let (clients, _) = synth_dataset(4, 3, 4, 0.0, 2000, 100, &mut rng).unwrap();
        for c in &clients {
            let mut hist = [0usize; 4];
            for &l in c.labels() {
                hist[l as usize] += 1;
            }
            for &count in &hist {
                let frac = count as f64 / c.len() as f64;
                assert!((frac - 0.25).abs() < 0.05, "{hist:?}");
            }
        }
    }

    #[test]
    fn synthetic_fully_heterogeneous_is_single_label() {
        let mut rng = rng_for(55, &[]);
        let (clients, _) = synth_dataset(6, 3, 3, 1.0, 200, 50, &mut rng).unwrap();
        for (c, ds) in clients.iter().enumerate() {
            let expect = (c % 3) as u8;
            assert!(ds.labels().iter().all(|&l| l == expect));
        }
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let (a, at) = synth_dataset(3, 4, 2, 0.5, 100, 40, &mut rng_for(56, &[])).unwrap();
        let (b, bt) = synth_dataset(3, 4, 2, 0.5, 100, 40, &mut rng_for(56, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
    }

    #[test]
    fn columnar_roundtrip_is_bitexact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let (mut clients, _) = synth_dataset(1, 5, 3, 0.3, 64, 10, &mut rng_for(57, &[])).unwrap();
        let ds = clients.remove(0);
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path, ds.name()).unwrap();
        assert_eq!(ds, loaded);
        // The serialized bytes themselves are reproducible.
        let bytes1 = std::fs::read(&path).unwrap();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn idx_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();

        // A 2x2x3 image file.
        let img_path = dir.path().join("img.idx");
        let mut bytes = vec![0, 0, 8, 3];
        for d in [2u32, 2, 3] {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend((0..12).map(|i| (i * 20) as u8));
        std::fs::write(&img_path, &bytes).unwrap();
        match load_idx(&img_path).unwrap() {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                assert_eq!((count, rows, cols), (2, 2, 3));
                assert_eq!(pixels.len(), 12);
            }
            IdxData::Labels(_) => panic!("expected images"),
        }

        // Truncated payload names expected vs actual byte counts.
        let bad_path = dir.path().join("trunc.idx");
        std::fs::write(&bad_path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_idx(&bad_path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("9 bytes") && msg.contains("expected 12"), "{msg}");

        // Bad magic.
        let magic_path = dir.path().join("magic.idx");
        std::fs::write(&magic_path, [9u8, 9, 9, 9, 0, 0, 0, 0]).unwrap();
        assert!(load_idx(&magic_path).is_err());

        // Labels file.
        let lbl_path = dir.path().join("lbl.idx");
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 1, 2, 3, 4]);
        std::fs::write(&lbl_path, &bytes).unwrap();
        match load_idx(&lbl_path).unwrap() {
            IdxData::Labels(l) => assert_eq!(l, vec![0, 1, 2, 3, 4]),
            IdxData::Images { .. } => panic!("expected labels"),
        }
    }

    #[test]
    fn gzipped_idx_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 8, 9]);
        let gz_path = dir.path().join("lbl.idx.gz");
        let mut enc =
            flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&bytes).unwrap();
        std::fs::write(&gz_path, enc.finish().unwrap()).unwrap();
        match load_idx(&gz_path).unwrap() {
            IdxData::Labels(l) => assert_eq!(l, vec![7, 8, 9]),
            IdxData::Images { .. } => panic!("expected labels"),
        }
    }
}
