//! Knowledge source of encoded posts, exact nearest-neighbor search by
//! Euclidean distance, and retrieval augmentation of modality sequences.
//!
//! Retrieval is not differentiated: stored payloads are snapshots that get
//! realigned with the model through [`KnowledgeSource::refresh`] once per
//! training epoch.

use crate::bytes;
use crate::corpus::TokenizedPost;
use crate::encoder::{encode, pool, ModalityEncoding, PooledVector};
use crate::error::{CoreError, Result};
use crate::matrix::{Mask, Matrix};
use crate::params::ParamStore;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"RACMIDX1";
const VERSION: u32 = 1;

/// One stored post: its pooled key vector plus the full per-modality
/// payload that augmentation splices into queries.
#[derive(Debug, Clone, PartialEq)]
pub struct KsEntry {
    pub pooled: PooledVector,
    pub payload: ModalityEncoding,
}

impl KsEntry {
    pub fn id(&self) -> &str {
        &self.payload.post_id
    }
}

/// The retrieval corpus. Entry order follows construction; lookups go
/// through an id map, so order only affects iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSource {
    entries: Vec<KsEntry>,
    by_id: HashMap<String, usize>,
    d: usize,
    shape: (usize, usize, usize),
}

impl KnowledgeSource {
    /// Encode and pool every post under `theta`.
    pub fn build(posts: &[TokenizedPost], theta: &ParamStore) -> Result<Self> {
        if posts.is_empty() {
            return Err(CoreError::CorpusTooSmall(
                "knowledge source needs at least one post".into(),
            ));
        }
        let mut entries = Vec::with_capacity(posts.len());
        for post in posts {
            let payload = encode(post, theta)?;
            let pooled = pool(&payload)?;
            entries.push(KsEntry { pooled, payload });
        }
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<KsEntry>) -> Result<Self> {
        let first = &entries[0].payload;
        let d = first.d();
        let shape = (first.title.rows(), first.description.rows(), first.code.rows());
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let p = &e.payload;
            if p.d() != d
                || (p.title.rows(), p.description.rows(), p.code.rows()) != shape
                || e.pooled.d() != d
            {
                return Err(CoreError::ShapeMismatch {
                    op: "knowledge_source",
                    detail: format!("entry {:?} breaks the uniform payload shape", e.id()),
                });
            }
            if by_id.insert(e.id().to_string(), i).is_some() {
                return Err(CoreError::DuplicateId { id: e.id().to_string(), ordinal: i + 1 });
            }
        }
        Ok(Self { entries, by_id, d, shape })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// (n_title, n_description, n_code) of every payload.
    pub fn payload_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn get(&self, id: &str) -> Option<&KsEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[KsEntry] {
        &self.entries
    }

    /// Re-encode every entry under the current parameters. `posts` must be
    /// the same corpus the source was built from, in any order.
    pub fn refresh(&mut self, posts: &[TokenizedPost], theta: &ParamStore) -> Result<()> {
        if posts.len() != self.entries.len() {
            return Err(CoreError::InvalidConfig(format!(
                "refresh corpus has {} posts, source has {}",
                posts.len(),
                self.entries.len()
            )));
        }
        for post in posts {
            let Some(&i) = self.by_id.get(&post.id) else {
                return Err(CoreError::InvalidConfig(format!(
                    "refresh corpus post {:?} is not in the source",
                    post.id
                )));
            };
            let payload = encode(post, theta)?;
            let pooled = pool(&payload)?;
            self.entries[i] = KsEntry { pooled, payload };
        }
        Ok(())
    }
}

/// Euclidean distance between pooled vectors.
pub fn distance(u: &PooledVector, w: &PooledVector) -> Result<f64> {
    if u.d() != w.d() {
        return Err(CoreError::ShapeMismatch {
            op: "distance",
            detail: format!("widths {} vs {}", u.d(), w.d()),
        });
    }
    let mut acc = 0.0;
    for (a, b) in u.v.data().iter().zip(w.v.data()) {
        let diff = a - b;
        acc += diff * diff;
    }
    Ok(acc.sqrt())
}

/// The k nearest entries to `q`, ascending by distance with ties broken by
/// ascending id; the entry whose id equals `exclude` is never returned.
pub fn knn(
    ks: &KnowledgeSource,
    q: &PooledVector,
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(CoreError::InvalidConfig("knn needs k >= 1".into()));
    }
    let mut cand: Vec<(f64, &str)> = Vec::with_capacity(ks.len());
    for e in &ks.entries {
        if exclude == Some(e.id()) {
            continue;
        }
        cand.push((distance(q, &e.pooled)?, e.id()));
    }
    if k > cand.len() {
        return Err(CoreError::KTooLarge { k, available: cand.len() });
    }
    let cmp = |a: &(f64, &str), b: &(f64, &str)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(cand.into_iter().map(|(dist, id)| (id.to_string(), dist)).collect())
}

/// A query post's encodings extended with its retrieved neighbors: per
/// modality the self block is followed by k neighbor blocks in ascending
/// distance order, giving (k+1)*n rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEncoding {
    pub post_id: String,
    pub title: Matrix,
    pub title_mask: Mask,
    pub description: Matrix,
    pub description_mask: Mask,
    pub code: Matrix,
    pub code_mask: Mask,
    /// Retrieved (id, distance) pairs, ascending.
    pub provenance: Vec<(String, f64)>,
}

impl AugmentedEncoding {
    pub fn d(&self) -> usize {
        self.title.cols()
    }
}

/// Splice the k nearest stored payloads onto a query encoding. k = 0 is
/// the identity; the query's own id is excluded from retrieval when given.
pub fn augment(
    enc: &ModalityEncoding,
    ks: &KnowledgeSource,
    k: usize,
    exclude: Option<&str>,
) -> Result<AugmentedEncoding> {
    if k == 0 {
        return Ok(AugmentedEncoding {
            post_id: enc.post_id.clone(),
            title: enc.title.clone(),
            title_mask: enc.title_mask.clone(),
            description: enc.description.clone(),
            description_mask: enc.description_mask.clone(),
            code: enc.code.clone(),
            code_mask: enc.code_mask.clone(),
            provenance: Vec::new(),
        });
    }
    let q = pool(enc)?;
    let hits = knn(ks, &q, k, exclude)?;
    let mut titles = vec![&enc.title];
    let mut title_masks = vec![&enc.title_mask];
    let mut descs = vec![&enc.description];
    let mut desc_masks = vec![&enc.description_mask];
    let mut codes = vec![&enc.code];
    let mut code_masks = vec![&enc.code_mask];
    for (id, _) in &hits {
        let p = &ks.get(id).expect("knn returns stored ids").payload;
        titles.push(&p.title);
        title_masks.push(&p.title_mask);
        descs.push(&p.description);
        desc_masks.push(&p.description_mask);
        codes.push(&p.code);
        code_masks.push(&p.code_mask);
    }
    Ok(AugmentedEncoding {
        post_id: enc.post_id.clone(),
        title: Matrix::concat_rows(&titles)?,
        title_mask: Mask::concat(&title_masks),
        description: Matrix::concat_rows(&descs)?,
        description_mask: Mask::concat(&desc_masks),
        code: Matrix::concat_rows(&codes)?,
        code_mask: Mask::concat(&code_masks),
        provenance: hits,
    })
}

/// Serialize the source to the versioned binary index format. `meta` is an
/// arbitrary caller string stored verbatim, conventionally the JSON snapshot
/// of the configuration that produced the index.
pub fn save_index(ks: &KnowledgeSource, path: &Path, meta: &str) -> Result<()> {
    let (n_t, n_b, n_c) = ks.shape;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, ks.len() as u32, ks.d as u32, n_t as u32, n_b as u32, n_c as u32] {
        bytes::put_u32(&mut buf, v);
    }
    bytes::put_str(&mut buf, meta);
    for e in &ks.entries {
        bytes::put_str(&mut buf, e.id());
        bytes::put_matrix(&mut buf, &e.pooled.v);
        bytes::put_matrix(&mut buf, &e.payload.title);
        bytes::put_matrix(&mut buf, &e.payload.description);
        bytes::put_matrix(&mut buf, &e.payload.code);
        bytes::put_mask(&mut buf, &e.payload.title_mask);
        bytes::put_mask(&mut buf, &e.payload.description_mask);
        bytes::put_mask(&mut buf, &e.payload.code_mask);
    }
    bytes::seal(&mut buf);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read an index back with its embedded meta string; `expect_d` guards
/// against mixing widths across runs.
pub fn load_index(path: &Path, expect_d: Option<usize>) -> Result<(KnowledgeSource, String)> {
    let buf = std::fs::read(path)?;
    let mut cur = bytes::open(&buf, MAGIC)?;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(CoreError::BadFile {
            offset: 8,
            reason: format!("unsupported version {version}"),
        });
    }
    let n = cur.u32("entry count")? as usize;
    let d = cur.u32("width")? as usize;
    if let Some(expected) = expect_d {
        if d != expected {
            return Err(CoreError::WidthMismatch { file_d: d, expected_d: expected });
        }
    }
    let n_t = cur.u32("title length")? as usize;
    let n_b = cur.u32("description length")? as usize;
    let n_c = cur.u32("code length")? as usize;
    let meta = cur.string("meta")?;
    if n == 0 {
        return Err(CoreError::BadFile { offset: 12, reason: "index holds zero entries".into() });
    }
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let id = cur.string("id")?;
        let pooled_v = cur.matrix(1, d, "pooled vector")?;
        let title = cur.matrix(n_t, d, "title payload")?;
        let description = cur.matrix(n_b, d, "description payload")?;
        let code = cur.matrix(n_c, d, "code payload")?;
        let title_mask = cur.mask(n_t, "title mask")?;
        let description_mask = cur.mask(n_b, "description mask")?;
        let code_mask = cur.mask(n_c, "code mask")?;
        entries.push(KsEntry {
            pooled: PooledVector { v: pooled_v, post_id: id.clone() },
            payload: ModalityEncoding {
                post_id: id,
                title,
                title_mask,
                description,
                description_mask,
                code,
                code_mask,
            },
        });
    }
    cur.finish()?;
    Ok((KnowledgeSource::from_entries(entries)?, meta))
}
