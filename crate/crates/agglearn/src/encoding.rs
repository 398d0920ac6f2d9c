//! Cross-feature one-hot encoding.
//!
//! A row of F categorical features is encoded as K(x): the concatenation of
//! one-hot vectors for every single feature and every unordered feature pair,
//! so a fully in-vocabulary row has exactly F + F(F-1)/2 active coordinates.
//! The exact encoder gives each (feature, modality) and (pair, modality
//! combination) its own coordinate. The hashed encoder maps the same units
//! into a fixed space of size p where collisions share a coordinate and
//! accumulate their values.

use crate::data::OOV_INDEX;
use crate::error::{Error, Result};

/// Hard cap on feature count. The pair-offset table is quadratic in the
/// number of features, so unbounded schemas (for example from a hostile
/// metadata file) could exhaust memory before any real work starts.
pub const MAX_FEATURES: usize = 1024;

/// Sparse vector with strictly increasing coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    coords: Vec<u64>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds from unordered (coordinate, value) pairs. Duplicate coordinates
    /// are summed; entries whose final value is exactly zero are dropped, so
    /// `get` treats absent and zero alike.
    pub fn from_pairs(mut pairs: Vec<(u64, f64)>) -> Self {
        pairs.sort_unstable_by_key(|&(c, _)| c);
        let mut coords = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (c, v) in pairs {
            if coords.last() == Some(&c) {
                *values.last_mut().expect("values parallel to coords") += v;
            } else {
                coords.push(c);
                values.push(v);
            }
        }
        let mut out = SparseVector { coords, values };
        out.drop_zeros();
        out
    }

    /// Builds from presorted parallel arrays, validating the ordering
    /// invariant. Used by parsers of external files.
    pub fn from_sorted(coords: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(Error::InvalidArgument(
                "coordinate and value lengths differ".to_string(),
            ));
        }
        if !coords.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "coordinates must be strictly increasing".to_string(),
            ));
        }
        Ok(SparseVector { coords, values })
    }

    /// Compresses a dense vector, keeping nonzero entries.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                coords.push(i as u64);
                values.push(v);
            }
        }
        SparseVector { coords, values }
    }

    fn drop_zeros(&mut self) {
        if self.values.contains(&0.0) {
            let mut coords = Vec::with_capacity(self.coords.len());
            let mut values = Vec::with_capacity(self.values.len());
            for (&c, &v) in self.coords.iter().zip(&self.values) {
                if v != 0.0 {
                    coords.push(c);
                    values.push(v);
                }
            }
            self.coords = coords;
            self.values = values;
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[u64] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at a coordinate, 0 when absent.
    pub fn get(&self, coord: u64) -> f64 {
        match self.coords.binary_search(&coord) {
            Ok(i) => self.values[i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.coords.iter().copied().zip(self.values.iter().copied())
    }

    pub fn value_sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Coordinate layout of the exact encoder: single-feature blocks first, then
/// one block per pair (i, j) with i < j in lexicographic order, row-major in
/// (m_i, m_j) within a block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureIndexMap {
    cardinalities: Vec<u64>,
    single_offsets: Vec<u64>,
    pair_offsets: Vec<u64>,
    singles_end: u64,
    total_dim: u64,
}

/// What a coordinate stands for, recovered by [`FeatureIndexMap::decode`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    Single {
        feature: usize,
        modality: u64,
    },
    Pair {
        feature_i: usize,
        feature_j: usize,
        modality_i: u64,
        modality_j: u64,
    },
}

impl FeatureIndexMap {
    pub fn new(cardinalities: &[usize]) -> Result<Self> {
        let f = cardinalities.len();
        if f > MAX_FEATURES {
            return Err(Error::InvalidArgument(format!(
                "{f} features exceeds the supported maximum of {MAX_FEATURES}"
            )));
        }
        let cards: Vec<u64> = cardinalities.iter().map(|&d| d as u64).collect();
        let overflow = || Error::InvalidArgument("coordinate space overflows u64".to_string());
        let mut single_offsets = Vec::with_capacity(f);
        let mut next: u64 = 0;
        for &d in &cards {
            single_offsets.push(next);
            next = next.checked_add(d).ok_or_else(overflow)?;
        }
        let singles_end = next;
        let mut pair_offsets = Vec::with_capacity(f * f.saturating_sub(1) / 2);
        for i in 0..f {
            for j in i + 1..f {
                pair_offsets.push(next);
                let block = cards[i].checked_mul(cards[j]).ok_or_else(overflow)?;
                next = next.checked_add(block).ok_or_else(overflow)?;
            }
        }
        Ok(FeatureIndexMap {
            cardinalities: cards,
            single_offsets,
            pair_offsets,
            singles_end,
            total_dim: next,
        })
    }

    pub fn num_features(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinality(&self, feature: usize) -> u64 {
        self.cardinalities[feature]
    }

    pub fn cardinalities(&self) -> &[u64] {
        &self.cardinalities
    }

    pub fn total_dim(&self) -> u64 {
        self.total_dim
    }

    /// Index of pair block (i, j), i < j, in lexicographic order.
    fn pair_block(&self, i: usize, j: usize) -> usize {
        let f = self.num_features();
        i * f - i * (i + 1) / 2 + (j - i - 1)
    }

    fn check_modality(&self, feature: usize, modality: u64) -> Result<()> {
        let f = self.num_features();
        if feature >= f {
            return Err(Error::InvalidArgument(format!(
                "feature {feature} out of range ({f} features)"
            )));
        }
        let d = self.cardinalities[feature];
        if modality >= d {
            return Err(Error::ModalityOutOfRange {
                feature,
                modality,
                cardinality: d,
            });
        }
        Ok(())
    }

    pub fn coordinate_of(&self, feature: usize, modality: u64) -> Result<u64> {
        self.check_modality(feature, modality)?;
        Ok(self.single_offsets[feature] + modality)
    }

    pub fn coordinate_of_pair(
        &self,
        feature_i: usize,
        feature_j: usize,
        modality_i: u64,
        modality_j: u64,
    ) -> Result<u64> {
        if feature_i >= feature_j {
            return Err(Error::InvalidArgument(format!(
                "pair features must satisfy i < j, got ({feature_i}, {feature_j})"
            )));
        }
        self.check_modality(feature_i, modality_i)?;
        self.check_modality(feature_j, modality_j)?;
        let block = self.pair_block(feature_i, feature_j);
        Ok(self.pair_offsets[block] + modality_i * self.cardinalities[feature_j] + modality_j)
    }

    /// Recovers the (feature, modality) unit a coordinate encodes.
    pub fn decode(&self, coord: u64) -> Result<Unit> {
        if coord >= self.total_dim {
            return Err(Error::InvalidArgument(format!(
                "coordinate {coord} outside space of size {}",
                self.total_dim
            )));
        }
        if coord < self.singles_end {
            let feature = self.single_offsets.partition_point(|&o| o <= coord) - 1;
            return Ok(Unit::Single {
                feature,
                modality: coord - self.single_offsets[feature],
            });
        }
        let block = self.pair_offsets.partition_point(|&o| o <= coord) - 1;
        let (feature_i, feature_j) = self.pair_block_features(block);
        let within = coord - self.pair_offsets[block];
        let d_j = self.cardinalities[feature_j];
        Ok(Unit::Pair {
            feature_i,
            feature_j,
            modality_i: within / d_j,
            modality_j: within % d_j,
        })
    }

    /// Inverse of `pair_block`: which (i, j) a lexicographic block index is.
    fn pair_block_features(&self, block: usize) -> (usize, usize) {
        let f = self.num_features();
        // Blocks for a fixed i span [cum(i-1), cum(i)) with
        // cum(i) = (i+1)(2f-i-2)/2; binary search the smallest i whose
        // cumulative count exceeds `block`.
        let cum = |i: usize| (i + 1) * (2 * f - i - 2) / 2;
        let mut lo = 0usize;
        let mut hi = f - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if cum(mid) > block {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let before = if lo == 0 { 0 } else { cum(lo - 1) };
        (lo, lo + 1 + (block - before))
    }

    /// Coordinate one past the last single-feature block.
    pub fn singles_end(&self) -> u64 {
        self.singles_end
    }
}

/// Hashed-encoder parameters: space size p and the hash seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashedEncoderConfig {
    /// Size p of the hashing space; every unit lands in [0, p).
    pub space_size: u64,
    /// Seed folded into the hash so distinct reports can use distinct
    /// coordinate spaces.
    pub salt: u64,
}

impl HashedEncoderConfig {
    pub fn new(space_size: u64, salt: u64) -> Self {
        HashedEncoderConfig { space_size, salt }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const UNIT_SEPARATOR: u8 = 0x1f;

/// FNV-1a over the salt (little-endian bytes) followed by the decimal ASCII
/// of each part, parts separated by the byte 0x1f. Pinned so that reports
/// hashed on different machines or runs agree coordinate-for-coordinate.
fn fnv1a64(salt: u64, parts: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in salt.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for (idx, &part) in parts.iter().enumerate() {
        if idx > 0 {
            h = (h ^ UNIT_SEPARATOR as u64).wrapping_mul(FNV_PRIME);
        }
        let mut buf = [0u8; 20];
        let mut n = part;
        let mut pos = buf.len();
        loop {
            pos -= 1;
            buf[pos] = b'0' + (n % 10) as u8;
            n /= 10;
            if n == 0 {
                break;
            }
        }
        for &b in &buf[pos..] {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn hash_single(config: &HashedEncoderConfig, feature: u64, modality: u64) -> u64 {
    fnv1a64(config.salt, &[feature, modality]) % config.space_size
}

fn hash_pair(
    config: &HashedEncoderConfig,
    feature_i: u64,
    modality_i: u64,
    feature_j: u64,
    modality_j: u64,
) -> u64 {
    fnv1a64(config.salt, &[feature_i, modality_i, feature_j, modality_j]) % config.space_size
}

/// Either coordinate layout, carried by reports and models so downstream
/// stages interpret coordinates the same way the aggregation did.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Exact(FeatureIndexMap),
    Hashed {
        num_features: usize,
        config: HashedEncoderConfig,
    },
}

impl Encoder {
    pub fn exact(cardinalities: &[usize]) -> Result<Self> {
        Ok(Encoder::Exact(FeatureIndexMap::new(cardinalities)?))
    }

    pub fn hashed(num_features: usize, config: HashedEncoderConfig) -> Result<Self> {
        if num_features > MAX_FEATURES {
            return Err(Error::InvalidArgument(format!(
                "{num_features} features exceeds the supported maximum of {MAX_FEATURES}"
            )));
        }
        if config.space_size == 0 {
            return Err(Error::InvalidArgument(
                "hash space size must be at least 1".to_string(),
            ));
        }
        Ok(Encoder::Hashed {
            num_features,
            config,
        })
    }

    pub fn num_features(&self) -> usize {
        match self {
            Encoder::Exact(map) => map.num_features(),
            Encoder::Hashed { num_features, .. } => *num_features,
        }
    }

    /// Size of the coordinate space: total_dim for exact, p for hashed.
    pub fn dim(&self) -> u64 {
        match self {
            Encoder::Exact(map) => map.total_dim(),
            Encoder::Hashed { config, .. } => config.space_size,
        }
    }

    /// Units a fully in-vocabulary row emits: F + F(F-1)/2.
    pub fn units_per_row(&self) -> u64 {
        let f = self.num_features() as u64;
        f + f * (f - 1) / 2
    }

    pub fn index_map(&self) -> Option<&FeatureIndexMap> {
        match self {
            Encoder::Exact(map) => Some(map),
            Encoder::Hashed { .. } => None,
        }
    }

    pub fn encode(&self, row: &[u32]) -> Result<SparseVector> {
        let mut pairs = Vec::with_capacity(self.units_per_row() as usize);
        self.for_each_unit(row, |coord| pairs.push((coord, 1.0)))?;
        Ok(SparseVector::from_pairs(pairs))
    }

    /// Streams the coordinates of every unit of `row`, without merging
    /// hash collisions. Out-of-vocabulary features emit nothing.
    pub(crate) fn for_each_unit(&self, row: &[u32], mut emit: impl FnMut(u64)) -> Result<()> {
        let f = self.num_features();
        if row.len() != f {
            return Err(Error::Contract(format!(
                "row has {} features, encoder expects {f}",
                row.len()
            )));
        }
        match self {
            Encoder::Exact(map) => {
                for (i, &m) in row.iter().enumerate() {
                    if m == OOV_INDEX {
                        continue;
                    }
                    emit(map.coordinate_of(i, m as u64)?);
                }
                for (i, &mi) in row.iter().enumerate() {
                    if mi == OOV_INDEX {
                        continue;
                    }
                    for (j, &mj) in row.iter().enumerate().skip(i + 1) {
                        if mj == OOV_INDEX {
                            continue;
                        }
                        emit(map.coordinate_of_pair(i, j, mi as u64, mj as u64)?);
                    }
                }
            }
            Encoder::Hashed { config, .. } => {
                if config.space_size == 0 {
                    return Err(Error::InvalidArgument(
                        "hash space size must be at least 1".to_string(),
                    ));
                }
                for (i, &m) in row.iter().enumerate() {
                    if m == OOV_INDEX {
                        continue;
                    }
                    emit(hash_single(config, i as u64, m as u64));
                }
                for (i, &mi) in row.iter().enumerate() {
                    if mi == OOV_INDEX {
                        continue;
                    }
                    for (j, &mj) in row.iter().enumerate().skip(i + 1) {
                        if mj == OOV_INDEX {
                            continue;
                        }
                        emit(hash_pair(config, i as u64, mi as u64, j as u64, mj as u64));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Renders the encoder as ordered metadata pairs, the shared descriptor
/// convention of report sidecars and model files.
pub(crate) fn encoder_meta_fields(encoder: &Encoder) -> Vec<(String, String)> {
    match encoder {
        Encoder::Exact(map) => {
            let cards: Vec<String> = map.cardinalities().iter().map(u64::to_string).collect();
            vec![
                ("encoder".into(), "exact".into()),
                ("num_features".into(), map.num_features().to_string()),
                ("cardinalities".into(), cards.join(",")),
            ]
        }
        Encoder::Hashed {
            num_features,
            config,
        } => vec![
            ("encoder".into(), "hashed".into()),
            ("num_features".into(), num_features.to_string()),
            ("hash_space".into(), config.space_size.to_string()),
            ("hash_salt".into(), config.salt.to_string()),
        ],
    }
}

/// Rebuilds an encoder from metadata pairs. `next` yields the (line, value)
/// of the requested key, letting each file format drive its own cursor while
/// sharing the descriptor convention.
pub(crate) fn encoder_from_meta(
    next: &mut dyn FnMut(&str) -> Result<(u64, String)>,
) -> Result<Encoder> {
    fn parse<T: std::str::FromStr>(raw: &str, line: u64, what: &str) -> Result<T> {
        raw.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse {what} from `{raw}`"),
        })
    }
    let (kind_line, kind) = next("encoder")?;
    let (line, raw) = next("num_features")?;
    let num_features: usize = parse(&raw, line, "feature count")?;
    match kind.trim() {
        "exact" => {
            let (line, raw) = next("cardinalities")?;
            let mut cards = Vec::new();
            if !raw.trim().is_empty() {
                for part in raw.split(',') {
                    cards.push(parse::<usize>(part, line, "cardinality")?);
                }
            }
            if cards.len() != num_features {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "expected {num_features} cardinalities, found {}",
                        cards.len()
                    ),
                });
            }
            Encoder::exact(&cards)
        }
        "hashed" => {
            let (line, raw) = next("hash_space")?;
            let space_size: u64 = parse(&raw, line, "hash space size")?;
            let (line, raw) = next("hash_salt")?;
            let salt: u64 = parse(&raw, line, "hash salt")?;
            Encoder::hashed(num_features, HashedEncoderConfig::new(space_size, salt))
        }
        other => Err(Error::Parse {
            line: kind_line,
            message: format!("unknown encoder kind `{other}`"),
        }),
    }
}

/// Encodes a row under the exact layout.
pub fn encode(row: &[u32], map: &FeatureIndexMap) -> Result<SparseVector> {
    Encoder::Exact(map.clone()).encode(row)
}

/// Encodes a row under the hashing trick; the feature count is taken from
/// the row itself.
pub fn hashed_encode(row: &[u32], config: &HashedEncoderConfig) -> Result<SparseVector> {
    Encoder::hashed(row.len(), *config)?.encode(row)
}
