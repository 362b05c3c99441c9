//! Binary (`PCSQ1`) and plain-text sequence files, and dataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{config_hash, SceneConfig};
use super::SequenceRecord;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::PointFrame;

pub const SEQUENCE_MAGIC: &[u8; 5] = b"PCSQ1";
/// Label written for points of an unlabeled frame.
pub const UNLABELED: u16 = u16::MAX;
pub const MANIFEST_FILE: &str = "dataset.json";

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Binary encoding: magic, `u32` frame count, feature width and class count,
/// then per frame a `u32` index, `u32` point count and per point `3 + C`
/// little-endian `f32` followed by a `u16` label.
pub fn sequence_to_bytes(rec: &SequenceRecord) -> Result<Vec<u8>> {
    if rec.num_classes > UNLABELED as usize {
        return Err(Error::InvalidArgument("class count exceeds u16 labels".into()));
    }
    let c = rec.feature_width;
    let mut out = Vec::with_capacity(17 + rec.num_points() * ((3 + c) * 4 + 2));
    out.extend_from_slice(SEQUENCE_MAGIC);
    push_u32(&mut out, rec.num_frames())?;
    push_u32(&mut out, c)?;
    push_u32(&mut out, rec.num_classes)?;
    for f in &rec.frames {
        push_u32(&mut out, f.frame_index)?;
        push_u32(&mut out, f.len())?;
        for i in 0..f.len() {
            for v in f.coords[i].iter().chain(f.features.row(i)) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            let label = f.labels.as_ref().map_or(UNLABELED, |l| l[i] as u16);
            out.extend_from_slice(&label.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                msg: format!("truncated file while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

fn parse_binary(bytes: &[u8]) -> Result<SequenceRecord> {
    let mut r = Reader { bytes, pos: 0 };
    r.take(SEQUENCE_MAGIC.len(), "magic")?;
    let nf = r.u32("frame count")?;
    let c = r.u32("feature width")?;
    let k = r.u32("class count")?;
    if c == 0 {
        return Err(Error::Parse {
            offset: 9,
            msg: "feature width must be positive".into(),
        });
    }
    let mut frames = Vec::with_capacity(nf.min(1 << 16));
    for _ in 0..nf {
        let frame_offset = r.pos;
        let index = r.u32("frame index")?;
        let n = r.u32("point count")?;
        let record = (3 + c) * 4 + 2;
        if n.checked_mul(record).map_or(true, |b| b > bytes.len() - r.pos) {
            return Err(Error::Parse {
                offset: r.pos,
                msg: format!("truncated file: frame declares {n} points"),
            });
        }
        let mut coords = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n * c);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let rec = r.take(record, "point")?;
            let f = |j: usize| f32::from_le_bytes(rec[4 * j..4 * j + 4].try_into().unwrap()) as f64;
            coords.push([f(0), f(1), f(2)]);
            feats.extend((3..3 + c).map(f));
            labels.push(u16::from_le_bytes(rec[record - 2..].try_into().unwrap()));
        }
        let labels = if labels.iter().all(|&l| l == UNLABELED) {
            None
        } else {
            Some(labels.into_iter().map(usize::from).collect())
        };
        let features = Tensor::new(vec![n.max(1), c], feats).map_err(|_| Error::Parse {
            offset: frame_offset,
            msg: "frame has no points".into(),
        })?;
        let frame = PointFrame::new(coords, features, labels, index).map_err(|e| Error::Parse {
            offset: frame_offset,
            msg: e.to_string(),
        })?;
        frames.push(frame);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: "trailing bytes after the last frame".into(),
        });
    }
    SequenceRecord::new(frames, k, None).map_err(|e| Error::Parse {
        offset: bytes.len(),
        msg: e.to_string(),
    })
}

/// Text form: one point per line as `x y z f1 .. fC label`, `#` comments,
/// and optional `frame <index>` lines starting a new frame.
fn parse_text(bytes: &[u8]) -> Result<SequenceRecord> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        msg: "text sequence is not valid UTF-8".into(),
    })?;
    struct Pending {
        index: usize,
        offset: usize,
        coords: Vec<[f64; 3]>,
        feats: Vec<f64>,
        labels: Vec<usize>,
    }
    let mut done: Vec<Pending> = Vec::new();
    let mut cur: Option<Pending> = None;
    let mut width: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { offset: at, msg };
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens[0] == "frame" {
            let index = match tokens.as_slice() {
                [_, idx] => idx.parse::<usize>().map_err(|e| err(format!("bad frame index: {e}")))?,
                _ => return Err(err("expected `frame <index>`".into())),
            };
            done.extend(cur.take());
            cur = Some(Pending {
                index,
                offset: at,
                coords: Vec::new(),
                feats: Vec::new(),
                labels: Vec::new(),
            });
            continue;
        }
        if tokens.len() < 5 {
            return Err(err(format!("expected x y z, features and a label, got {} fields", tokens.len())));
        }
        let c = tokens.len() - 4;
        if *width.get_or_insert(c) != c {
            return Err(err(format!("{c} features, earlier lines had {}", width.unwrap())));
        }
        let mut vals = Vec::with_capacity(3 + c);
        for t in &tokens[..3 + c] {
            let v: f64 = t.parse().map_err(|e| err(format!("bad number {t:?}: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {t:?}")));
            }
            vals.push(v);
        }
        let label: usize = tokens[3 + c]
            .parse()
            .map_err(|e| err(format!("bad label {:?}: {e}", tokens[3 + c])))?;
        let frame = cur.get_or_insert_with(|| Pending {
            index: done.last().map_or(0, |p| p.index + 1),
            offset: at,
            coords: Vec::new(),
            feats: Vec::new(),
            labels: Vec::new(),
        });
        frame.coords.push([vals[0], vals[1], vals[2]]);
        frame.feats.extend_from_slice(&vals[3..]);
        frame.labels.push(label);
    }
    done.extend(cur.take());
    let c = width.ok_or(Error::Parse {
        offset: bytes.len(),
        msg: "no points in text sequence".into(),
    })?;
    let k = done.iter().flat_map(|p| p.labels.iter()).max().map_or(0, |m| m + 1);
    let mut frames = Vec::with_capacity(done.len());
    for p in done {
        let n = p.coords.len();
        let err = |msg: String| Error::Parse { offset: p.offset, msg };
        if n == 0 {
            return Err(err("frame has no points".into()));
        }
        let features = Tensor::new(vec![n, c], p.feats)?;
        frames.push(PointFrame::new(p.coords, features, Some(p.labels), p.index).map_err(|e| err(e.to_string()))?);
    }
    SequenceRecord::new(frames, k, None).map_err(|e| Error::Parse {
        offset: bytes.len(),
        msg: e.to_string(),
    })
}

/// Parses either format; binary is recognised by its magic.
pub fn parse_sequence(bytes: &[u8]) -> Result<SequenceRecord> {
    if bytes.starts_with(SEQUENCE_MAGIC) {
        parse_binary(bytes)
    } else {
        parse_text(bytes)
    }
}

pub fn save_sequence(rec: &SequenceRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sequence_to_bytes(rec)?).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SequenceRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_sequence(&bytes)
}

/// Index of a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub num_classes: usize,
    pub feature_width: usize,
    pub sequences: Vec<String>,
    pub config: SceneConfig,
}

/// Writes `seq_XXX.pcsq` files and a manifest into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, cfg: &SceneConfig, records: &[SequenceRecord]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no sequences to save".into()))?;
    let mut names = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let name = format!("seq_{i:03}.pcsq");
        save_sequence(rec, dir.join(&name))?;
        names.push(name);
    }
    let manifest = DatasetManifest {
        config_hash: config_hash(cfg),
        num_classes: first.num_classes,
        feature_width: first.feature_width,
        sequences: names,
        config: cfg.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads the sequences listed in the manifest, or every `.pcsq`/`.txt`
/// file in name order when there is none.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let (files, hash): (Vec<PathBuf>, Option<String>) = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        (m.sequences.iter().map(|s| dir.join(s)).collect(), Some(m.config_hash))
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pcsq" | "txt")))
            .collect();
        files.sort();
        (files, None)
    };
    files
        .iter()
        .map(|p| {
            let mut rec = load_sequence(p)?;
            rec.metadata = hash.clone();
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SequenceRecord {
        let f = |i: usize, n: usize| {
            let coords = (0..n).map(|j| [j as f64 * 0.5, -(i as f64), 0.25]).collect();
            let feats = Tensor::new(vec![n, 2], (0..2 * n).map(|v| v as f64 * 0.125).collect()).unwrap();
            PointFrame::new(coords, feats, Some((0..n).map(|j| j % 3).collect()), i * 2).unwrap()
        };
        SequenceRecord::new(vec![f(0, 3), f(1, 4)], 3, None).unwrap()
    }

    #[test]
    fn binary_round_trip_is_byte_identical() {
        let rec = small();
        let bytes = sequence_to_bytes(&rec).unwrap();
        let back = parse_sequence(&bytes).unwrap();
        assert_eq!(back, rec);
        assert_eq!(sequence_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_garbage_are_parse_errors() {
        let bytes = sequence_to_bytes(&small()).unwrap();
        for cut in [3, 5, 10, 20, 25, bytes.len() - 1] {
            match parse_sequence(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(parse_sequence(&extra), Err(Error::Parse { .. })));
        // A point count far beyond the payload.
        let mut huge = bytes.clone();
        huge[21..25].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(parse_sequence(&huge), Err(Error::Parse { .. })));
    }

    #[test]
    fn text_fixture_parses() {
        let text = "# two frames\nframe 0\n0 0 0 0.5 1\n1 0 0 0.5 0\nframe 3\n0 1 0 0.25 2 # trailing\n";
        let rec = parse_sequence(text.as_bytes()).unwrap();
        assert_eq!(rec.num_frames(), 2);
        assert_eq!(rec.num_classes, 3);
        assert_eq!(rec.frames[1].frame_index, 3);
        assert_eq!(rec.frames[0].labels, Some(vec![1, 0]));
        assert_eq!(rec.frames[1].features.data(), &[0.25]);

        let no_frames = parse_sequence(b"0 0 0 1 0\n1 1 1 1 1\n").unwrap();
        assert_eq!(no_frames.num_frames(), 1);

        match parse_sequence(b"0 0 0 1 0\n0 0 zz 1 0\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_sequence(b"frame 0\nframe 1\n0 0 0 1 0\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_sequence(b"frame 2\n0 0 0 1 0\nframe 1\n0 0 0 1 0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn unlabeled_frames_round_trip() {
        let mut rec = small();
        for f in &mut rec.frames {
            f.labels = None;
        }
        let back = parse_sequence(&sequence_to_bytes(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
