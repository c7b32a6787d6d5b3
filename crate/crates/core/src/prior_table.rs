//! Lookup table for the derivative of an SαS log-prior.
//!
//! The domain `[-ε, ε]` is cut into `2·N_g` cells of width `δ = ε / N_g`.
//! Key `k ∈ {-N_g, …, N_g}` stores the centred-difference estimate
//!
//! ```text
//! T_V(k) = [p(θ_k + δ) − p(θ_k − δ)] / (2δ · p(θ_k)),   θ_k = k·δ
//! ```
//!
//! which approximates `(ln p)'(θ_k)` with `O(δ²)` error. A weight `θ` maps to
//! key `clamp(⌊θ/δ⌋, −N_g, N_g)`, so values outside the domain saturate at the
//! boundary keys.
//!
//! Binary layout (little endian): magic `SDRT`, version `u32`, then `α, γ, µ,
//! ε` as `f64`, `N_g` as `u64`, `c` as `f64`, the `2·N_g + 1` values as `f64`,
//! and finally the CRC-32 of every preceding byte.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::stable::{self, DensityError, QuadratureConfig, StableParams};

pub const TABLE_MAGIC: [u8; 4] = *b"SDRT";
pub const TABLE_VERSION: u32 = 1;
/// Bytes before the value array.
pub const HEADER_LEN: usize = 4 + 4 + 4 * 8 + 8 + 8;

/// Domain half-width used when none is given: `N_g · δ` with `δ = 0.002`.
pub const DEFAULT_EPSILON: f64 = 0.8;
pub const DEFAULT_N_GRID: usize = 400;

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("invalid table domain: {0}")]
    InvalidDomain(String),
    #[error("density underflows to zero at key {key} (theta = {theta})")]
    DegenerateDensity { key: i64, theta: f64 },
    #[error("bad magic bytes {found:?}, expected \"SDRT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported table format version {found} (expected {TABLE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("table data truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata stored ahead of the table values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableHeader {
    pub version: u32,
    pub alpha: f64,
    pub gamma: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub n_grid: u64,
    pub prior_scale_c: f64,
}

impl TableHeader {
    pub fn delta(&self) -> f64 {
        self.epsilon / self.n_grid as f64
    }
}

/// Precomputed `(ln p)'` grid with keys `-N_g..=N_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivTable {
    params: StableParams,
    epsilon: f64,
    n_grid: usize,
    prior_scale_c: f64,
    values: Vec<f64>,
}

impl DerivTable {
    /// Builds the table with `c = 1` by evaluating the density at the
    /// `2·N_g + 3` grid points `jδ`, `j = −N_g−1..=N_g+1`; every centred
    /// difference reuses these points.
    pub fn build(
        params: StableParams,
        epsilon: f64,
        n_grid: usize,
        quad: &QuadratureConfig,
    ) -> Result<Self, TableError> {
        check_domain(epsilon, n_grid)?;
        if params.beta() != 0.0 {
            return Err(DensityError::NonSymmetric { beta: params.beta() }.into());
        }
        let n = n_grid as i64;
        let delta = epsilon / n_grid as f64;
        let densities = (-n - 1..=n + 1)
            .into_par_iter()
            .map(|j| stable::pdf(&params, j as f64 * delta, quad))
            .collect::<Result<Vec<f64>, _>>()?;
        // densities[j + n + 1] = p(jδ)
        let p = |j: i64| densities[(j + n + 1) as usize];
        let mut values = Vec::with_capacity(2 * n_grid + 1);
        for k in -n..=n {
            let centre = p(k);
            if !(centre > 0.0) {
                return Err(TableError::DegenerateDensity { key: k, theta: k as f64 * delta });
            }
            values.push((p(k + 1) - p(k - 1)) / (2.0 * delta * centre));
        }
        Ok(Self { params, epsilon, n_grid, prior_scale_c: 1.0, values })
    }

    /// Table whose value at each key is `derivative(θ_k)`; used to substitute
    /// a closed-form derivative for the finite-difference one.
    pub fn from_fn<F: Fn(f64) -> f64>(
        params: StableParams,
        epsilon: f64,
        n_grid: usize,
        derivative: F,
    ) -> Result<Self, TableError> {
        check_domain(epsilon, n_grid)?;
        let n = n_grid as i64;
        let delta = epsilon / n_grid as f64;
        let values = (-n..=n).map(|k| derivative(k as f64 * delta)).collect();
        Ok(Self { params, epsilon, n_grid, prior_scale_c: 1.0, values })
    }

    /// Returns the same table with query-time multiplier `c`.
    pub fn with_scale(mut self, prior_scale_c: f64) -> Result<Self, TableError> {
        if !(prior_scale_c > 0.0 && prior_scale_c.is_finite()) {
            return Err(TableError::InvalidDomain(format!(
                "prior scale c must be positive, got {prior_scale_c}"
            )));
        }
        self.prior_scale_c = prior_scale_c;
        Ok(self)
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }
    pub fn delta(&self) -> f64 {
        self.epsilon / self.n_grid as f64
    }
    pub fn prior_scale_c(&self) -> f64 {
        self.prior_scale_c
    }
    /// Values indexed by `key + N_g`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid point `θ_k = k·δ`.
    pub fn grid_point(&self, key: i64) -> f64 {
        key as f64 * self.delta()
    }

    /// `clamp(⌊θ/δ⌋, −N_g, N_g)`.
    #[inline]
    pub fn key_of(&self, theta: f64) -> i64 {
        let n = self.n_grid as i64;
        let raw = (theta / self.delta()).floor();
        if raw >= n as f64 {
            n
        } else if raw <= -(n as f64) {
            -n
        } else {
            raw as i64
        }
    }

    /// Stored value at `key`; keys outside the grid are clamped.
    #[inline]
    pub fn value_at_key(&self, key: i64) -> f64 {
        let n = self.n_grid as i64;
        self.values[(key.clamp(-n, n) + n) as usize]
    }

    /// Unscaled table derivative `T_V(T_K(θ))`.
    #[inline]
    pub fn derivative(&self, theta: f64) -> f64 {
        self.value_at_key(self.key_of(theta))
    }

    /// `c · T_V(T_K(θ))`.
    #[inline]
    pub fn lookup_grad(&self, theta: f64) -> f64 {
        self.prior_scale_c * self.derivative(theta)
    }

    /// True when `θ` lies outside `[−ε, ε]`, i.e. the lookup saturated.
    #[inline]
    pub fn is_saturated(&self, theta: f64) -> bool {
        theta.abs() > self.epsilon
    }

    pub fn header(&self) -> TableHeader {
        TableHeader {
            version: TABLE_VERSION,
            alpha: self.params.alpha(),
            gamma: self.params.gamma(),
            mu: self.params.mu(),
            epsilon: self.epsilon,
            n_grid: self.n_grid as u64,
            prior_scale_c: self.prior_scale_c,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len() + 4);
        buf.extend_from_slice(&TABLE_MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        for v in [self.params.alpha(), self.params.gamma(), self.params.mu(), self.epsilon] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.n_grid as u64).to_le_bytes());
        buf.extend_from_slice(&self.prior_scale_c.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// CRC-32 trailer of the serialized form.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TableError> {
        let header = parse_header(bytes)?;
        let n_values = header
            .n_grid
            .checked_mul(2)
            .and_then(|v| v.checked_add(1))
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| TableError::InvalidDomain(format!("grid count {}", header.n_grid)))?;
        let needed = n_values
            .checked_mul(8)
            .and_then(|v| v.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| TableError::InvalidDomain(format!("grid count {}", header.n_grid)))?;
        if bytes.len() < needed {
            return Err(TableError::Truncated { needed, available: bytes.len() });
        }
        let body = &bytes[..needed - 4];
        let stored = u32::from_le_bytes(bytes[needed - 4..needed].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(TableError::ChecksumMismatch { stored, computed });
        }
        let values = body[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = StableParams::symmetric(header.alpha, header.gamma, header.mu)?;
        let n_grid = usize::try_from(header.n_grid)
            .map_err(|_| TableError::InvalidDomain(format!("grid count {}", header.n_grid)))?;
        check_domain(header.epsilon, n_grid)?;
        Ok(Self { params, epsilon: header.epsilon, n_grid, prior_scale_c: header.prior_scale_c, values })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TableError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TableError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the fixed-size header, leaving the values unread.
pub fn read_header<R: Read>(mut r: R) -> Result<TableHeader, TableError> {
    let mut buf = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut buf[filled..])? {
            0 => return Err(TableError::Truncated { needed: HEADER_LEN, available: filled }),
            n => filled += n,
        }
    }
    parse_header(&buf)
}

fn parse_header(bytes: &[u8]) -> Result<TableHeader, TableError> {
    if bytes.len() < HEADER_LEN {
        return Err(TableError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != TABLE_MAGIC {
        return Err(TableError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != TABLE_VERSION {
        return Err(TableError::VersionMismatch { found: version });
    }
    let f = |i: usize| f64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    Ok(TableHeader {
        version,
        alpha: f(0),
        gamma: f(1),
        mu: f(2),
        epsilon: f(3),
        n_grid: u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")),
        prior_scale_c: f(5),
    })
}

fn check_domain(epsilon: f64, n_grid: usize) -> Result<(), TableError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TableError::InvalidDomain(format!("epsilon must be positive, got {epsilon}")));
    }
    if n_grid == 0 {
        return Err(TableError::InvalidDomain("grid count must be at least 1".into()));
    }
    Ok(())
}
