//! Bloom-sketch membership index over token w-grams of a training corpus.
//!
//! Probes use double hashing over two seeded 64-bit xxh3 hashes:
//! `g_i = h1 + i * h2 (mod m)`, with `h2` forced odd.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use xxhash_rust::xxh3::Xxh3;

use crate::error::{Error, Result};
use crate::model::{ContaminationLabel, Corpus, Instance};

pub const DEFAULT_GRAM_WIDTH: usize = 8;
pub const DEFAULT_HIT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SEEDS: [u64; 2] = [0x9e37_79b9_7f4a_7c15, 0xc2b2_ae3d_27d4_eb4f];

const MAGIC: &[u8; 8] = b"CKPORTR\0";
const VERSION: u32 = 1;
const MIN_BITS: u64 = 64;
const GRAM_SEP: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitIndex {
    width: usize,
    m: u64,
    h: u32,
    bits: Vec<u64>,
    n_inserted: u64,
    target_fpr: f64,
    seeds: [u64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PortraitHit {
    pub hit_fraction: f64,
    pub label: ContaminationLabel,
}

/// Standard Bloom sizing: m = ceil(-n ln p / ln²2), h = round(m/n · ln 2).
pub fn bloom_size(expected: u64, fpr: f64) -> (u64, u32) {
    if expected == 0 {
        return (MIN_BITS, 1);
    }
    let ln2 = std::f64::consts::LN_2;
    let m = (-(expected as f64) * fpr.ln() / (ln2 * ln2)).ceil() as u64;
    let m = m.max(MIN_BITS);
    let h = ((m as f64 / expected as f64) * ln2).round().max(1.0) as u32;
    (m, h)
}

impl PortraitIndex {
    pub fn with_capacity(width: usize, expected: u64, target_fpr: f64) -> Result<Self> {
        Self::with_seeds(width, expected, target_fpr, DEFAULT_SEEDS)
    }

    pub fn with_seeds(width: usize, expected: u64, target_fpr: f64, seeds: [u64; 2]) -> Result<Self> {
        if width < 1 {
            return Err(Error::Parameter("gram width must be >= 1".into()));
        }
        if !(target_fpr > 0.0 && target_fpr < 1.0) {
            return Err(Error::Parameter(format!(
                "target false-positive rate must be in (0, 1), got {target_fpr}"
            )));
        }
        let (m, h) = bloom_size(expected, target_fpr);
        Ok(PortraitIndex {
            width,
            m,
            h,
            bits: vec![0; m.div_ceil(64) as usize],
            n_inserted: 0,
            target_fpr,
            seeds,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit_len(&self) -> u64 {
        self.m
    }

    pub fn hash_count(&self) -> u32 {
        self.h
    }

    pub fn n_inserted(&self) -> u64 {
        self.n_inserted
    }

    pub fn target_fpr(&self) -> f64 {
        self.target_fpr
    }

    pub fn is_empty(&self) -> bool {
        self.n_inserted == 0
    }

    fn hashes(&self, gram: &[String]) -> (u64, u64) {
        let mut a = Xxh3::with_seed(self.seeds[0]);
        let mut b = Xxh3::with_seed(self.seeds[1]);
        for tok in gram {
            a.update(tok.as_bytes());
            a.update(&[GRAM_SEP]);
            b.update(tok.as_bytes());
            b.update(&[GRAM_SEP]);
        }
        (a.digest(), b.digest() | 1)
    }

    fn probes(&self, gram: &[String]) -> impl Iterator<Item = u64> {
        let (h1, h2) = self.hashes(gram);
        let m = self.m;
        (0..self.h as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
    }

    pub fn insert_gram(&mut self, gram: &[String]) {
        let probes: Vec<u64> = self.probes(gram).collect();
        for bit in probes {
            self.bits[(bit / 64) as usize] |= 1 << (bit % 64);
        }
        self.n_inserted += 1;
    }

    pub fn contains_gram(&self, gram: &[String]) -> bool {
        self.probes(gram)
            .all(|bit| self.bits[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    pub fn insert_tokens(&mut self, tokens: &[String]) {
        if tokens.len() < self.width {
            return;
        }
        for gram in tokens.windows(self.width) {
            self.insert_gram(gram);
        }
    }

    pub fn hit_fraction(&self, x: &Instance) -> Result<f64> {
        if x.len() < self.width {
            return Err(Error::NotApplicable(format!(
                "instance `{}` has {} tokens, fewer than gram width {}",
                x.id,
                x.len(),
                self.width
            )));
        }
        let grams = x.tokens.windows(self.width);
        let total = grams.len();
        let hits = grams.filter(|g| self.contains_gram(g)).count();
        Ok(hits as f64 / total as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&self.m.to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&self.n_inserted.to_le_bytes())?;
        w.write_all(&self.target_fpr.to_le_bytes())?;
        w.write_all(&self.seeds[0].to_le_bytes())?;
        w.write_all(&self.seeds[1].to_le_bytes())?;
        for word in &self.bits {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a portrait index (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "portrait version {version} unsupported (expected {VERSION})"
            )));
        }
        let width = cur.u32()? as usize;
        let m = cur.u64()?;
        let h = cur.u32()?;
        let n_inserted = cur.u64()?;
        let target_fpr = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let seeds = [cur.u64()?, cur.u64()?];
        if width < 1 || m < 1 || h < 1 {
            return Err(Error::Format("portrait header has zero width, size, or hash count".into()));
        }
        let words = m.div_ceil(64) as usize;
        if bytes.len() - cur.pos != words * 8 {
            return Err(Error::Format(format!(
                "portrait bit array has {} bytes, header implies {}",
                bytes.len() - cur.pos,
                words * 8
            )));
        }
        let bits = (0..words).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        Ok(PortraitIndex {
            width,
            m,
            h,
            bits,
            n_inserted,
            target_fpr,
            seeds,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("portrait file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inserts every w-gram of every training instance.
///
/// When no instance reaches `w` tokens the index is empty and a warning is logged.
pub fn build_portrait(training: &Corpus, width: usize, target_fpr: f64) -> Result<PortraitIndex> {
    let expected: u64 = training
        .iter()
        .map(|i| i.len().saturating_sub(width.saturating_sub(1)) as u64)
        .sum();
    let mut index = PortraitIndex::with_capacity(width, expected, target_fpr)?;
    for inst in training {
        index.insert_tokens(&inst.tokens);
    }
    if index.is_empty() {
        log::warn!("no training instance has at least {width} tokens; portrait index is empty");
    }
    Ok(index)
}

pub fn query_portrait(index: &PortraitIndex, x: &Instance, hit_threshold: f64) -> Result<PortraitHit> {
    let hit_fraction = index.hit_fraction(x)?;
    let label = if hit_fraction >= hit_threshold {
        ContaminationLabel::Seen
    } else {
        ContaminationLabel::Unseen
    };
    Ok(PortraitHit {
        hit_fraction,
        label,
    })
}
